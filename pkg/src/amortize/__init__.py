"""Amortized inference toolkit: synthetic Captcha generation, a from-scratch
trained sequence regressor, importance-sampling inference with an ABC
likelihood, and a closed-form Gaussian mismatch laboratory."""

__version__ = "0.1.0"
