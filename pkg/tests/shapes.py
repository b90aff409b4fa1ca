"""Synthetic binary test images with known structure."""

from __future__ import annotations

import numpy as np


def plus_image(size=105, arm=21, width=3):
    img = np.zeros((size, size), dtype=np.uint8)
    c = size // 2
    img[c - width // 2 : c + width // 2 + 1, c - arm // 2 : c + arm // 2 + 1] = 1
    img[c - arm // 2 : c + arm // 2 + 1, c - width // 2 : c + width // 2 + 1] = 1
    return img


def bar_image(size=105, length=41, width=3, horizontal=True):
    img = np.zeros((size, size), dtype=np.uint8)
    c = size // 2
    if horizontal:
        img[c - width // 2 : c + width // 2 + 1, c - length // 2 : c + length // 2 + 1] = 1
    else:
        img[c - length // 2 : c + length // 2 + 1, c - width // 2 : c + width // 2 + 1] = 1
    return img


def ring_image(size=105, radius=20, width=3):
    img = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    d = np.sqrt((yy - size / 2) ** 2 + (xx - size / 2) ** 2)
    img[(d > radius - width / 2) & (d < radius + width / 2)] = 1
    return img


def translate_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, xs = np.nonzero(img)
    ys2, xs2 = ys + dy, xs + dx
    keep = (ys2 >= 0) & (ys2 < h) & (xs2 >= 0) & (xs2 < w)
    out[ys2[keep], xs2[keep]] = 1
    return out
