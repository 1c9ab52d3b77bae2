"""Timestamp labels drawn with a built-in 5x7 bitmap font."""

from __future__ import annotations

import numpy as np

from .geometry import Box

_GLYPHS = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    ":": ["00000", "01100", "01100", "00000", "01100", "01100", "00000"],
}
GLYPH_W, GLYPH_H = 5, 7


def text_bitmap(text: str) -> np.ndarray:
    """Glyph bitmap of ``text`` with one blank column between characters."""
    cols = []
    for k, ch in enumerate(text):
        rows = _GLYPHS.get(ch)
        if rows is None:
            raise ValueError(f"no glyph for {ch!r}")
        if k:
            cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        cols.append(np.array([[c == "1" for c in r] for r in rows], dtype=bool))
    if not cols:
        return np.zeros((GLYPH_H, 0), dtype=bool)
    return np.hstack(cols)


_CACHE: dict[str, tuple[np.ndarray, np.ndarray]] = {}


def _label_masks(text: str):
    if text not in _CACHE:
        glyph = text_bitmap(text)
        padded = np.pad(glyph, 1)
        outline = np.zeros_like(padded)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                outline |= np.roll(np.roll(padded, dy, axis=0), dx, axis=1)
        _CACHE[text] = (padded, outline & ~padded)
    return _CACHE[text]


def label_origin(box: Box, text: str, frame_shape) -> tuple[int, int]:
    """Top-left of the outlined label: just above ``box``, clamped into the frame."""
    fg, _ = _label_masks(text)
    lh, lw = fg.shape
    h, w = frame_shape[:2]
    y = box.y - lh
    x = box.x
    y = min(max(y, 0), max(h - lh, 0))
    x = min(max(x, 0), max(w - lw, 0))
    return x, y


def draw_label(image: np.ndarray, box: Box, text: str) -> None:
    """White text with a 1-pixel black outline, in place."""
    if not text:
        return
    fg, outline = _label_masks(text)
    x, y = label_origin(box, text, image.shape)
    h, w = image.shape[:2]
    lh = min(fg.shape[0], h - y)
    lw = min(fg.shape[1], w - x)
    region = image[y : y + lh, x : x + lw]
    region[outline[:lh, :lw]] = 0
    region[fg[:lh, :lw]] = 255
