"""Pixel-grid primitives: masks, logit maps, rects, hulls, crops, paste-back.

Conventions used everywhere in this package:

* Coordinates are (row, col) with origin at the top-left pixel.
* Rects are half-open on the high side: a pixel (r, c) is inside iff
  row0 <= r < row1 and col0 <= c < col1.
* A logit map is a 2D float array of unbounded scores; a mask is a 2D
  array whose truthy pixels are foreground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError

DEFAULT_CROP_PAD = 4
DEFAULT_FALLBACK_SIZE = 32
PASTE_FILL_LOGIT = -8.0

BOX = "box"
POINT = "point"


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [row0, row1) x [col0, col1)."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self) -> None:
        for name in ("row0", "col0", "row1", "col1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.row0 >= self.row1 or self.col0 >= self.col1:
            raise ValueError(f"rect has non-positive area: {self}")

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    def clamped(self, img_h: int, img_w: int) -> "Rect":
        """Clip to image bounds, keeping at least one pixel."""
        r0 = min(max(self.row0, 0), img_h - 1)
        c0 = min(max(self.col0, 0), img_w - 1)
        r1 = max(min(self.row1, img_h), r0 + 1)
        c1 = max(min(self.col1, img_w), c0 + 1)
        return Rect(r0, c0, r1, c1)

    def expanded(self, pad: int) -> "Rect":
        return Rect(self.row0 - pad, self.col0 - pad, self.row1 + pad, self.col1 + pad)


@dataclass(frozen=True)
class Prompt:
    """A per-object hint: a bounding box or a single point."""

    kind: str
    box: Rect | None = None
    point: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind == BOX:
            if self.box is None:
                raise ValueError("box prompt needs a rect")
        elif self.kind == POINT:
            if self.point is None:
                raise ValueError("point prompt needs a coordinate")
        else:
            raise ValueError(f"unknown prompt kind: {self.kind!r}")

    def validate_bounds(self, img_h: int, img_w: int) -> None:
        if self.kind == BOX:
            b = self.box
            if not (0 <= b.row0 < b.row1 <= img_h and 0 <= b.col0 < b.col1 <= img_w):
                raise ValueError(f"box {b} outside {img_h}x{img_w} image")
        else:
            r, c = self.point
            if not (0 <= r < img_h and 0 <= c < img_w):
                raise ValueError(f"point {self.point} outside {img_h}x{img_w} image")


def box_prompt(row0: int, col0: int, row1: int, col1: int) -> Prompt:
    return Prompt(kind=BOX, box=Rect(row0, col0, row1, col1))


def point_prompt(row: int, col: int) -> Prompt:
    return Prompt(kind=POINT, point=(int(row), int(col)))


def binarize(logits: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """Foreground where logit > threshold; ties go to background."""
    return np.asarray(logits) > threshold


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(mask: np.ndarray) -> list[tuple[int, int]]:
    """Convex hull vertices of all foreground pixel centers.

    Counter-clockwise order, treating (row, col) as plane coordinates:
    every consecutive vertex triple turns left (cross product > 0).
    Degenerate hulls (a single pixel, or collinear pixels) return 1 or
    2 vertices.
    """
    rows, cols = np.nonzero(np.asarray(mask))
    if rows.size == 0:
        raise EmptyMaskError("convex hull of an empty mask")
    pts = sorted({(int(r), int(c)) for r, c in zip(rows, cols)})
    if len(pts) == 1:
        return pts
    # Andrew's monotone chain; strict turns only, so collinear interior
    # points are dropped from the boundary.
    lower: list[tuple[int, int]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[int, int]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def tight_bbox(mask: np.ndarray) -> Rect:
    """Smallest rect containing every foreground pixel."""
    rows, cols = np.nonzero(np.asarray(mask))
    if rows.size == 0:
        raise EmptyMaskError("bbox of an empty mask")
    return Rect(int(rows.min()), int(cols.min()), int(rows.max()) + 1, int(cols.max()) + 1)


def prompt_to_crop_rect(
    prompt: Prompt,
    generalist_output: np.ndarray,
    pad: int = DEFAULT_CROP_PAD,
    fallback_size: int = DEFAULT_FALLBACK_SIZE,
) -> Rect:
    """Derive the specialist's crop window from a prompt.

    Box prompts pass through (padded, clamped). Point prompts take the
    bbox of the convex hull of the binarized generalist output; when
    that output is empty, a fallback_size square centered on the point.
    """
    img_h, img_w = generalist_output.shape
    prompt.validate_bounds(img_h, img_w)
    if prompt.kind == BOX:
        return prompt.box.expanded(pad).clamped(img_h, img_w)
    fg = binarize(generalist_output)
    if not fg.any():
        r, c = prompt.point
        half = fallback_size // 2
        rect = Rect(r - half, c - half, r - half + fallback_size, c - half + fallback_size)
        return rect.clamped(img_h, img_w)
    hull = convex_hull(fg)
    rs = [p[0] for p in hull]
    cs = [p[1] for p in hull]
    rect = Rect(min(rs), min(cs), max(rs) + 1, max(cs) + 1)
    return rect.expanded(pad).clamped(img_h, img_w)


def crop(values: np.ndarray, rect: Rect) -> np.ndarray:
    """Exact sub-window copy of a 2D map."""
    return np.array(values[rect.row0 : rect.row1, rect.col0 : rect.col1])


def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner alignment (corner samples preserved)."""
    values = np.asarray(values, dtype=np.float64)
    in_h, in_w = values.shape
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()
    r_src = np.linspace(0.0, in_h - 1, out_h) if out_h > 1 else np.zeros(1)
    c_src = np.linspace(0.0, in_w - 1, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.clip(np.floor(r_src).astype(int), 0, in_h - 1)
    c0 = np.clip(np.floor(c_src).astype(int), 0, in_w - 1)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (r_src - r0)[:, None]
    fc = (c_src - c0)[None, :]
    top = values[np.ix_(r0, c0)] * (1 - fc) + values[np.ix_(r0, c1)] * fc
    bot = values[np.ix_(r1, c0)] * (1 - fc) + values[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def paste_back(
    local: np.ndarray,
    rect: Rect,
    full_h: int,
    full_w: int,
    fill: float = PASTE_FILL_LOGIT,
) -> np.ndarray:
    """Lift crop-local logits into a full-resolution map.

    Pixels outside the rect get `fill`, a confident-background logit by
    default, so downstream binarization never marks them foreground.
    """
    out = np.full((full_h, full_w), fill, dtype=np.float64)
    out[rect.row0 : rect.row1, rect.col0 : rect.col1] = resize_bilinear(
        local, rect.height, rect.width
    )
    return out
