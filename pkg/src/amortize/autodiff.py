"""Dense float64 tensors with reverse-mode differentiation and Adam.

The graph is rebuilt on every forward pass (define-by-run): each op returns a
new Tensor holding its parents and a backward closure. ``backward()`` walks
the graph once in reverse topological order, so gradients are deterministic
and bit-identical across repeated runs on the same inputs.
"""

from __future__ import annotations

import ctypes
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _tune_allocator() -> None:
    # Training churns large short-lived buffers; glibc hands those back to the
    # OS as fresh mmaps by default, so every step pays page-fault cost. Keep
    # them on the heap instead. No-op where glibc is unavailable.
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-1, ctypes.c_int(-1))  # M_TRIM_THRESHOLD: never trim
        libc.mallopt(-4, 0)  # M_MMAP_MAX: no mmap'd allocations
    except Exception:
        pass


_tune_allocator()


class ConfigurationError(ValueError):
    """Shape or wiring mismatch when assembling a computation."""


class UsageError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar backward)."""


class TrainingError(RuntimeError):
    """Numeric failure during optimization (non-finite loss or gradient)."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward compute)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus an optional gradient slot and backward closure."""

    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents if _GRAD_ENABLED else ()
        self._backward = backward if _GRAD_ENABLED else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Gradient slot; zeros when the node did not feed the loss."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def backward(self):
        """Reverse-mode sweep from a scalar loss node."""
        if self.data.size != 1:
            raise UsageError(
                f"backward() requires a scalar loss node, got shape {self.data.shape}"
            )
        for node in reversed(_toposort(self)):
            if node.grad is None:
                node.grad = np.ones_like(node.data) if node is self else np.zeros_like(node.data)
            if node._backward is not None:
                node._backward(node.grad)

    # Operator sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape})"


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, iter(root._parents))]
    seen.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _needs_grad(*tensors: Tensor) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(t.requires_grad or t._parents or t._backward for t in tensors)


def parameter(data, rng=None, fan_in=None, name=None) -> Tensor:
    """Leaf tensor marked as trainable.

    With ``rng`` and ``fan_in`` given, values are drawn uniformly from
    [-1/sqrt(fan_in), +1/sqrt(fan_in)]; otherwise ``data`` is used as-is
    (pass zeros for biases).
    """
    if rng is not None:
        if fan_in is None or fan_in <= 0:
            raise ConfigurationError("fan_in must be positive for random init")
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=data)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Elementwise arithmetic (same shape, or one side scalar)


def _check_elementwise(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ConfigurationError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not match"
        )


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape) if shape == () else np.full(shape, np.sum(g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    out_data = a.data + b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    out_data = a.data - b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    out_data = a.data * b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "div")
    out_data = a.data / b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _reduce_to(g / b.data, a.data.shape))
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, g * out_data)

    return Tensor(out_data, parents=(x,), backward=backward)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, g / x.data)

    return Tensor(out_data, parents=(x,), backward=backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        # subgradient 0 at exactly 0
        _accum(x, g * (x.data > 0.0))

    return Tensor(out_data, parents=(x,), backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def tsum(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = np.asarray(x.data.sum() / n)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


# ---------------------------------------------------------------------------
# Shape plumbing


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _needs_grad(*tensors):
        return Tensor(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out_data = x.data[..., start:stop]
    if not _needs_grad(x):
        return Tensor(out_data.copy())

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _accum(x, full)

    return Tensor(out_data.copy(), parents=(x,), backward=backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward=backward)


def take_along_last(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick one entry per leading row: (N, k) x (N,) -> (N,)."""
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2 or index.shape != (x.data.shape[0],):
        raise ConfigurationError(
            f"take_along_last: got {x.data.shape} with index {index.shape}"
        )
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, index]
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        _accum(x, full)

    return Tensor(out_data, parents=(x,), backward=backward)


# ---------------------------------------------------------------------------
# Neural network layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """weight @ x + bias for a vector x, batched over leading rows for (N, n)."""
    w, xv = weight.data, x.data
    if w.ndim != 2:
        raise ConfigurationError(f"linear: weight must be 2-d, got {w.shape}")
    single = xv.ndim == 1
    x2 = xv[None, :] if single else xv
    if x2.ndim != 2 or x2.shape[1] != w.shape[1]:
        raise ConfigurationError(
            f"linear: input {xv.shape} does not conform to weight {w.shape}"
        )
    if bias is not None and bias.data.shape != (w.shape[0],):
        raise ConfigurationError(
            f"linear: bias {bias.data.shape} does not conform to weight {w.shape}"
        )
    out2 = x2 @ w.T
    if bias is not None:
        out2 = out2 + bias.data
    out_data = out2[0] if single else out2
    inputs = (x, weight) if bias is None else (x, weight, bias)
    if not _needs_grad(*inputs):
        return Tensor(out_data)

    def backward(g):
        g2 = g[None, :] if single else g
        if x.requires_grad or x._parents or x._backward:
            gx = g2 @ w
            _accum(x, gx[0] if single else gx)
        _accum(weight, g2.T @ x2)
        if bias is not None:
            _accum(bias, g2.sum(axis=0))

    return Tensor(out_data, parents=inputs, backward=backward)


_OFFSETS_3X3 = [(dy, dx) for dy in range(3) for dx in range(3)]


def _patch_matrix(xb: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*9, H*W) zero-padded 3x3 patch matrix.

    Built from nine aligned slice copies so the batched GEMM can run on it
    directly (column index is c*9 + 3*dy + dx, matching kernels.reshape).
    """
    n, c, h, w = xb.shape
    padded = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
    padded[:, :, 1:-1, 1:-1] = xb
    cols = np.empty((n, c, 9, h, w), dtype=np.float64)
    for j, (dy, dx) in enumerate(_OFFSETS_3X3):
        cols[:, :, j] = padded[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(n, c * 9, h * w)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, padding: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1; spatial dims preserved.

    Accepts (C, H, W) or batched (N, C, H, W) input; kernels are (F, C, 3, 3).
    """
    if padding != 1:
        raise ConfigurationError("conv2d supports padding=1 only")
    k = kernels.data
    if k.ndim != 4 or k.shape[2:] != (3, 3):
        raise ConfigurationError(f"conv2d: kernels must be (F, C, 3, 3), got {k.shape}")
    single = x.data.ndim == 3
    xb = x.data[None] if single else x.data
    if xb.ndim != 4 or xb.shape[1] != k.shape[1]:
        raise ConfigurationError(
            f"conv2d: input {x.data.shape} does not match kernels {k.shape}"
        )
    f, c = k.shape[0], k.shape[1]
    if bias is not None and bias.data.shape != (f,):
        raise ConfigurationError(f"conv2d: bias {bias.data.shape} must be ({f},)")
    n, _, h, w = xb.shape
    cols = _patch_matrix(xb)  # (N, C*9, H*W)
    out3 = np.matmul(k.reshape(f, c * 9), cols)  # (N, F, H*W)
    if bias is not None:
        out3 += bias.data[:, None]
    out_b = out3.reshape(n, f, h, w)
    out_data = out_b[0] if single else out_b
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    if not _needs_grad(*inputs):
        return Tensor(out_data)

    def backward(g):
        gb = (g[None] if single else g).reshape(n, f, h * w)
        dk = np.matmul(gb, cols.transpose(0, 2, 1)).sum(axis=0)
        _accum(kernels, dk.reshape(f, c, 3, 3))
        if bias is not None:
            _accum(bias, gb.sum(axis=(0, 2)))
        if x.requires_grad or x._parents or x._backward:
            # grad wrt input: cross-correlate the output grad with the
            # 180-degree rotated kernels, channels swapped
            gcols = _patch_matrix(gb.reshape(n, f, h, w))  # (N, F*9, H*W)
            krot = k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, f * 9)
            gx = np.matmul(krot, gcols).reshape(n, c, h, w)
            _accum(x, gx[0] if single else gx)

    return Tensor(out_data, parents=inputs, backward=backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over the trailing two axes.

    Gradient routes to the first (lowest flat index) maximum in each window.
    """
    xd = x.data
    if xd.ndim < 2 or xd.shape[-2] < 2 or xd.shape[-1] < 2:
        raise ConfigurationError(f"maxpool2d: needs H, W >= 2, got {xd.shape}")
    h2, w2 = xd.shape[-2] // 2, xd.shape[-1] // 2
    trimmed = xd[..., : h2 * 2, : w2 * 2]
    a = trimmed[..., 0::2, 0::2]
    b = trimmed[..., 0::2, 1::2]
    c = trimmed[..., 1::2, 0::2]
    d = trimmed[..., 1::2, 1::2]
    top = np.maximum(a, b)
    bot = np.maximum(c, d)
    out_data = np.maximum(top, bot)
    if not _needs_grad(x):
        return Tensor(out_data)
    # >= comparisons keep the tie-break at the lowest flat index:
    # window order (0,0), (0,1), (1,0), (1,1)
    ab = a >= b
    cd = c >= d
    first_row = top >= bot

    def backward(g):
        gx = np.zeros_like(xd)
        gv = gx[..., : h2 * 2, : w2 * 2]
        np.copyto(gv[..., 0::2, 0::2], g, where=first_row & ab)
        np.copyto(gv[..., 0::2, 1::2], g, where=first_row & ~ab)
        np.copyto(gv[..., 1::2, 0::2], g, where=~first_row & cd)
        np.copyto(gv[..., 1::2, 1::2], g, where=~first_row & ~cd)
        _accum(x, gx)

    return Tensor(out_data, parents=(x,), backward=backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    if not _needs_grad(x):
        return Tensor(out_data)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - dot))

    return Tensor(out_data, parents=(x,), backward=backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    if not _needs_grad(x):
        return Tensor(out_data)
    soft = np.exp(out_data)

    def backward(g):
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(x,), backward=backward)


class LSTMParams:
    """Gate weights for one LSTM layer: order (input, forget, candidate, output)."""

    def __init__(self, wx: Tensor, wh: Tensor, bias: Tensor):
        h4 = wx.data.shape[0]
        if h4 % 4 != 0 or wh.data.shape != (h4, h4 // 4) or bias.data.shape != (h4,):
            raise ConfigurationError(
                f"LSTMParams: inconsistent shapes {wx.data.shape}, "
                f"{wh.data.shape}, {bias.data.shape}"
            )
        self.wx = wx
        self.wh = wh
        self.bias = bias
        self.hidden = h4 // 4

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng) -> "LSTMParams":
        wx = parameter((4 * hidden, input_dim), rng=rng, fan_in=input_dim, name="lstm.wx")
        wh = parameter((4 * hidden, hidden), rng=rng, fan_in=hidden, name="lstm.wh")
        bias = parameter(np.zeros(4 * hidden), name="lstm.b")
        return cls(wx, wh, bias)

    def tensors(self):
        return [self.wx, self.wh, self.bias]


def lstm_cell(x: Tensor, hidden: Tensor, cell: Tensor, params: LSTMParams):
    """One LSTM recurrence step; returns (hidden', cell')."""
    h = params.hidden
    z = add(linear(x, params.wx, params.bias), linear(hidden, params.wh))
    gate_i = sigmoid(slice_last(z, 0, h))
    gate_f = sigmoid(slice_last(z, h, 2 * h))
    cand = tanh(slice_last(z, 2 * h, 3 * h))
    gate_o = sigmoid(slice_last(z, 3 * h, 4 * h))
    cell_new = add(mul(gate_f, cell), mul(gate_i, cand))
    hidden_new = mul(gate_o, tanh(cell_new))
    return hidden_new, cell_new


def backward(loss: Tensor) -> None:
    """Run the reverse sweep from a scalar loss (alias for loss.backward())."""
    loss.backward()


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Bias-corrected Adam over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], alpha=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(
                    f"non-finite gradient in parameter '{p.name or i}' at step {self.t}"
                )
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.alpha * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: Adam) -> Adam:
    """Functional flavor of one Adam update: assigns grads, steps, returns state."""
    if len(params) != len(grads):
        raise ConfigurationError("adam_step: params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(g) != p.data.shape:
            raise ConfigurationError(
                f"adam_step: grad shape {np.shape(g)} != param shape {p.data.shape}"
            )
        p.grad = np.asarray(g, dtype=np.float64)
    state.step()
    return state
