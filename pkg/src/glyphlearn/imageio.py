"""Image file I/O and report figures.

Binary ink images are stored dark-on-light: ink pixels are black (0) and
paper is white (255). PGM (P5) covers debug dumps; PNG covers report
figures (grayscale maps, exemplar grids with boxed targets, colored parse
overlays).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .drawing import CharacterType
from .errors import DataError
from .render import PixelMap
from .splines import Spline, eval_spline

Array = np.ndarray

# distinct stroke colors for parse overlays (RGB)
STROKE_COLORS = [
    (214, 39, 40),
    (31, 119, 180),
    (44, 160, 44),
    (255, 127, 14),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (23, 190, 207),
    (188, 189, 34),
    (127, 127, 127),
]


def write_pgm(path: str, gray: Array) -> None:
    """P5 binary PGM of a [0,1] or uint8 grayscale array."""
    arr = np.asarray(gray)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255).round().astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str) -> Array:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path} is not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    w, h, maxval = (int(f) for f in fields)
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PGM is not supported")
    arr = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if arr.size != w * h:
        raise DataError(f"{path} is truncated")
    return arr.reshape(h, w)


def write_png(path: str, img: Array) -> None:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_image(path: str) -> Array:
    """Grayscale uint8 array from a PNG/PGM path."""
    if path.endswith(".pgm"):
        return read_pgm(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e


def to_binary_ink(gray: Array, threshold: int = 128) -> Array:
    """Dark pixels are ink."""
    return (np.asarray(gray) < threshold).astype(np.uint8)


def binary_to_gray(image: Array) -> Array:
    """{0,1} ink mask to dark-on-light grayscale."""
    return ((1 - np.asarray(image)) * 255).astype(np.uint8)


def prob_map_to_gray(pm: PixelMap) -> Array:
    return ((1.0 - pm.probabilities) * 255).round().astype(np.uint8)


# ---------------------------------------------------------------------------
# figures


def image_grid(images: list[Array], n_cols: int, pad: int = 2, pad_value: int = 255) -> Array:
    """Tile grayscale uint8 images (same size) into a grid."""
    if not images:
        raise DataError("no images to tile")
    h, w = images[0].shape
    n_rows = (len(images) + n_cols - 1) // n_cols
    out = np.full(
        (n_rows * h + (n_rows + 1) * pad, n_cols * w + (n_cols + 1) * pad),
        pad_value,
        dtype=np.uint8,
    )
    for i, img in enumerate(images):
        r, c = divmod(i, n_cols)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        out[y : y + h, x : x + w] = img
    return out


def _to_rgb(gray: Array) -> Array:
    return np.stack([gray] * 3, axis=2)


def boxed(gray: Array, color=(214, 39, 40), width: int = 2) -> Array:
    """RGB copy of a grayscale image with a colored border box."""
    rgb = _to_rgb(gray).copy()
    for c in range(3):
        rgb[:width, :, c] = color[c]
        rgb[-width:, :, c] = color[c]
        rgb[:, :width, c] = color[c]
        rgb[:, -width:, c] = color[c]
    return rgb


def exemplar_figure(target_gray: Array, sample_grays: list[Array], pad: int = 3) -> Array:
    """Boxed target image on top, a 3x3 grid of samples below it (RGB)."""
    top = boxed(target_gray)
    grid = image_grid(sample_grays[:9], n_cols=3, pad=pad)
    grid_rgb = _to_rgb(grid)
    h_top, w_top, _ = top.shape
    h_g, w_g, _ = grid_rgb.shape
    width = max(w_top, w_g)
    out = np.full((h_top + pad + h_g, width, 3), 255, dtype=np.uint8)
    x0 = (width - w_top) // 2
    out[:h_top, x0 : x0 + w_top] = top
    x1 = (width - w_g) // 2
    out[h_top + pad :, x1 : x1 + w_g] = grid_rgb
    return out


def parse_overlay(image: Array, ctype: CharacterType, samples_per_stroke: int = 160) -> Array:
    """Colored stroke trajectories drawn over a binary image (RGB)."""
    gray = binary_to_gray(image)
    rgb = _to_rgb(((gray.astype(np.int32) + 510) // 3).astype(np.uint8))  # faded backdrop
    h, w, _ = rgb.shape
    for i, ctrl in enumerate(ctype.absolute_strokes()):
        color = STROKE_COLORS[i % len(STROKE_COLORS)]
        pts = eval_spline(Spline(ctrl), samples_per_stroke)
        for x, y in pts:
            xi, yi = int(round(x)), int(round(y))
            for dy in (0, 1):
                for dx in (0, 1):
                    yy, xx = yi + dy, xi + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        rgb[yy, xx] = color
    return rgb
