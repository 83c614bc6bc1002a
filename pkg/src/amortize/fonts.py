"""Embedded 7x9 bitmap glyphs.

Each glyph is nine rows of seven cells, '#' for ink. 'O' and 'Q' differ in
exactly three pixels, giving a deliberately confusable pair for ambiguity
experiments.
"""

import numpy as np

GLYPH_WIDTH = 7
GLYPH_HEIGHT = 9

_GLYPH_ROWS = {
    "0": [
        ".#####.",
        "#.....#",
        "#....##",
        "#...#.#",
        "#..#..#",
        "#.#...#",
        "##....#",
        "#.....#",
        ".#####.",
    ],
    "1": [
        "..##...",
        ".###...",
        "...#...",
        "...#...",
        "...#...",
        "...#...",
        "...#...",
        "...#...",
        ".#####.",
    ],
    "2": [
        ".#####.",
        "#.....#",
        "......#",
        ".....#.",
        "....#..",
        "...#...",
        "..#....",
        ".#.....",
        "#######",
    ],
    "3": [
        ".#####.",
        "#.....#",
        "......#",
        "......#",
        "..####.",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ],
    "4": [
        "....##.",
        "...#.#.",
        "..#..#.",
        ".#...#.",
        "#....#.",
        "#######",
        ".....#.",
        ".....#.",
        ".....#.",
    ],
    "5": [
        "#######",
        "#......",
        "#......",
        "######.",
        "......#",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ],
    "6": [
        ".#####.",
        "#.....#",
        "#......",
        "#......",
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
    ],
    "7": [
        "#######",
        "......#",
        ".....#.",
        "....#..",
        "...#...",
        "..#....",
        "..#....",
        "..#....",
        "..#....",
    ],
    "8": [
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
    ],
    "9": [
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        ".######",
        "......#",
        "......#",
        "#.....#",
        ".#####.",
    ],
    "A": [
        "..###..",
        ".#...#.",
        "#.....#",
        "#.....#",
        "#######",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
    ],
    "B": [
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        "######.",
    ],
    "C": [
        ".#####.",
        "#.....#",
        "#......",
        "#......",
        "#......",
        "#......",
        "#......",
        "#.....#",
        ".#####.",
    ],
    "D": [
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "######.",
    ],
    "E": [
        "#######",
        "#......",
        "#......",
        "#......",
        "#####..",
        "#......",
        "#......",
        "#......",
        "#######",
    ],
    "F": [
        "#######",
        "#......",
        "#......",
        "#......",
        "#####..",
        "#......",
        "#......",
        "#......",
        "#......",
    ],
    "O": [
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        ".#####.",
    ],
    "Q": [
        ".#####.",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "#..#..#",
        "#...#.#",
        "#....##",
        ".#####.",
    ],
}


def _build_atlas():
    atlas = {}
    for char, rows in _GLYPH_ROWS.items():
        if len(rows) != GLYPH_HEIGHT or any(len(r) != GLYPH_WIDTH for r in rows):
            raise ValueError(f"malformed glyph for {char!r}")
        atlas[char] = np.array(
            [[1.0 if cell == "#" else 0.0 for cell in row] for row in rows],
            dtype=np.float64,
        )
    return atlas


GLYPHS = _build_atlas()


def glyph_bitmap(char: str, scale: int = 1) -> np.ndarray:
    """Glyph raster scaled by an integer factor; raises KeyError for unknown chars."""
    base = GLYPHS[char]
    if scale == 1:
        return base.copy()
    return np.kron(base, np.ones((scale, scale), dtype=np.float64))
