"""Embedded fixed-size bitmap font used to rasterize synthetic pages.

Each glyph is an 8x6 binary cell (5x7 ink plus one blank spacing column and
one blank spacing row), so rendered text has exact, reproducible pixel
geometry and word boxes can be computed in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GLYPH_H = 8
GLYPH_W = 6

# 5x7 ink patterns; '#' = ink. Padded to 8x6 on load.
_PATTERNS = {
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "b": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "####."),
    "c": (".....", ".....", ".####", "#....", "#....", "#....", ".####"),
    "d": ("....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".####"),
    "f": ("..###", ".#...", "####.", ".#...", ".#...", ".#...", ".#..."),
    "g": (".....", ".####", "#...#", "#...#", ".####", "....#", ".###."),
    "h": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "i": ("..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."),
    "j": ("...#.", ".....", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."),
    "l": (".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"),
    "n": (".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "o": (".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."),
    "p": (".....", "####.", "#...#", "#...#", "####.", "#....", "#...."),
    "q": (".....", ".####", "#...#", "#...#", ".####", "....#", "....#"),
    "r": (".....", ".....", "#.##.", "##...", "#....", "#....", "#...."),
    "s": (".....", ".....", ".####", "#....", ".###.", "....#", "####."),
    "t": (".#...", ".#...", "####.", ".#...", ".#...", ".#...", "..##."),
    "u": (".....", ".....", "#...#", "#...#", "#...#", "#...#", ".####"),
    "v": (".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": (".....", ".....", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "x": (".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"),
    "y": (".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."),
    "z": (".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
    ":": (".....", "..#..", "..#..", ".....", "..#..", "..#..", "....."),
    "?": (".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."),
    "-": (".....", ".....", ".....", "#####", ".....", ".....", "....."),
    ".": (".....", ".....", ".....", ".....", ".....", ".##..", ".##.."),
    ",": (".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."),
}


@dataclass(frozen=True)
class GlyphFont:
    """Maps every charset character to one fixed-size binary bitmap."""

    charset: str
    bitmaps: dict[str, np.ndarray]
    height: int = GLYPH_H
    width: int = GLYPH_W

    def __post_init__(self):
        if len(set(self.charset)) != len(self.charset):
            raise ValueError("charset contains duplicate characters")
        missing = [c for c in self.charset if c not in self.bitmaps]
        if missing:
            raise ValueError(f"no bitmap for characters: {missing!r}")
        for c, bm in self.bitmaps.items():
            if bm.shape != (self.height, self.width):
                raise ValueError(f"bitmap for {c!r} has shape {bm.shape}")

    def glyph(self, char: str) -> np.ndarray:
        return self.bitmaps[char]

    def text_width(self, text: str) -> int:
        return len(text) * self.width

    def render_text(self, text: str) -> np.ndarray:
        """Binary (h, len*w) raster of `text`; 1 = ink."""
        if not text:
            return np.zeros((self.height, 0), dtype=np.uint8)
        return np.concatenate([self.glyph(c) for c in text], axis=1)


def _decode(pattern: tuple[str, ...]) -> np.ndarray:
    cell = np.zeros((GLYPH_H, GLYPH_W), dtype=np.uint8)
    for r, row in enumerate(pattern):
        for c, ch in enumerate(row):
            if ch == "#":
                cell[r, c] = 1
    return cell


def builtin_font() -> GlyphFont:
    """Lowercase letters, digits, space and light punctuation."""
    charset = "abcdefghijklmnopqrstuvwxyz0123456789 :?-.,"
    bitmaps = {c: _decode(_PATTERNS[c]) for c in charset}
    return GlyphFont(charset=charset, bitmaps=bitmaps)
