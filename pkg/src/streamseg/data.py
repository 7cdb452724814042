"""Synthetic stream generation, folder datasets, prompt derivation from
ground truth, and CSV report writing."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyMaskError,
    MissingMaskError,
    SizeMismatchError,
    UnreadableImageError,
)
from .geometry import BOX, POINT, Prompt, Rect, box_prompt, point_prompt, tight_bbox
from .pngio import gray_to_png_bytes, mask_to_png_bytes, png_bytes_to_gray

REPORT_HEADER = (
    "step,sample_id,prompt_kind,dsc_generalist,dsc_aux,dsc_fused,"
    "hd_fused,alpha_used,alpha_star,rectified,batch_len,batch_loss"
)

MASK_LOAD_THRESHOLD = 128  # of 255

FAMILIES = ("ellipse", "rounded_rect", "blob")


@dataclass
class Sample:
    sample_id: int
    image: np.ndarray  # (H, W) float32 in [0, 1]
    gt_mask: np.ndarray  # (H, W) bool
    prompts: list[Prompt] = field(default_factory=list)


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    count: int = 200
    image_size: int = 128
    shape_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)
    texture_noise_std: float = 0.05
    contrast: float = 0.35
    drift: tuple[float, float, float] | None = None  # end-of-stream weights

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        for w in (self.shape_weights, self.drift):
            if w is not None and abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"family weights must sum to 1, got {w}")


def _render_shape(rng: np.random.Generator, family: str, size: int) -> np.ndarray:
    """Exact inequality evaluation on pixel centers; always non-empty."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0.32, 0.68) * size
    cx = rng.uniform(0.32, 0.68) * size
    base_r = rng.uniform(0.12, 0.26) * size
    theta = rng.uniform(0.0, math.pi)
    dy = rr - cy
    dx = cc - cx
    # rotate into the shape frame
    py = math.cos(theta) * dy + math.sin(theta) * dx
    px = -math.sin(theta) * dy + math.cos(theta) * dx
    if family == "ellipse":
        ay = base_r * rng.uniform(0.7, 1.3)
        ax = base_r * rng.uniform(0.7, 1.3)
        mask = (py / ay) ** 2 + (px / ax) ** 2 <= 1.0
    elif family == "rounded_rect":
        hy = base_r * rng.uniform(0.7, 1.2)
        hx = base_r * rng.uniform(0.7, 1.2)
        rad = 0.35 * min(hy, hx)
        qy = np.abs(py) - (hy - rad)
        qx = np.abs(px) - (hx - rad)
        outside = np.hypot(np.maximum(qy, 0.0), np.maximum(qx, 0.0))
        sdf = outside + np.minimum(np.maximum(qy, qx), 0.0) - rad
        mask = sdf <= 0.0
    elif family == "blob":
        phi = np.arctan2(px, py)
        radius = np.full_like(phi, 1.0)
        for k in range(2, 6):
            amp = rng.uniform(0.0, 0.35 / k)
            phase = rng.uniform(0.0, 2 * math.pi)
            radius += amp * np.cos(k * phi + phase)
        mask = np.hypot(py, px) <= base_r * radius
    else:
        raise ValueError(f"unknown family {family!r}")
    if not mask.any():  # shape fell fully outside the canvas; should not happen
        mask[int(cy) % size, int(cx) % size] = True
    return mask


def generate_synthetic(
    cfg: SyntheticConfig, prompt_kinds: tuple[str, ...] = (BOX,)
) -> list[Sample]:
    """Deterministic stream of textured single-object images with exact
    ground truth. Optional drift interpolates the family weights from
    shape_weights to drift across the stream."""
    samples: list[Sample] = []
    w_start = np.asarray(cfg.shape_weights, dtype=np.float64)
    w_end = np.asarray(cfg.drift, dtype=np.float64) if cfg.drift else w_start
    for i in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, i])
        t = i / (cfg.count - 1) if cfg.count > 1 else 0.0
        weights = (1.0 - t) * w_start + t * w_end
        weights = weights / weights.sum()
        family = FAMILIES[int(rng.choice(3, p=weights))]
        mask = _render_shape(rng, family, cfg.image_size)

        base = rng.uniform(0.25, 0.45)
        texture = ndimage.gaussian_filter(
            rng.normal(0.0, 1.0, (cfg.image_size, cfg.image_size)), sigma=6.0
        )
        tex_std = texture.std()
        if tex_std > 0:
            texture *= cfg.texture_noise_std / tex_std
        image = base + texture + cfg.contrast * mask.astype(np.float64)
        image += rng.normal(0.0, cfg.texture_noise_std * 0.6, image.shape)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)

        prompts = [derive_prompts(mask, kind) for kind in prompt_kinds]
        samples.append(Sample(sample_id=i, image=image, gt_mask=mask, prompts=prompts))
    return samples


def derive_prompts(gt: np.ndarray, kind: str) -> Prompt:
    """Simulated prompt from ground truth: tight bbox, or the centroid
    (snapped to the nearest foreground pixel when it falls outside)."""
    gt = np.asarray(gt, dtype=bool)
    if not gt.any():
        raise EmptyMaskError("cannot derive a prompt from an empty mask")
    if kind == BOX:
        r = tight_bbox(gt)
        return box_prompt(r.row0, r.col0, r.row1, r.col1)
    if kind != POINT:
        raise ValueError(f"unknown prompt kind {kind!r}")
    rows, cols = np.nonzero(gt)
    cy = float(rows.mean())
    cx = float(cols.mean())
    ry = int(math.floor(cy + 0.5))
    rx = int(math.floor(cx + 0.5))
    if 0 <= ry < gt.shape[0] and 0 <= rx < gt.shape[1] and gt[ry, rx]:
        return point_prompt(ry, rx)
    d2 = (rows - cy) ** 2 + (cols - cx) ** 2
    best = int(np.argmin(d2))  # nonzero() is row-major, so ties pick that order
    return point_prompt(int(rows[best]), int(cols[best]))


def save_folder(samples, directory) -> None:
    """Materialize a stream as the images/ + masks/ folder layout."""
    img_dir = os.path.join(directory, "images")
    mask_dir = os.path.join(directory, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for s in samples:
        name = f"sample_{s.sample_id:05d}.png"
        with open(os.path.join(img_dir, name), "wb") as f:
            f.write(gray_to_png_bytes(s.image))
        with open(os.path.join(mask_dir, name), "wb") as f:
            f.write(mask_to_png_bytes(s.gt_mask))


def load_folder(directory, prompt_kinds: tuple[str, ...] = (BOX,)) -> list[Sample]:
    """Load images/NAME.png + masks/NAME.png pairs, name order, masks
    binarized at 128/255."""
    img_dir = os.path.join(directory, "images")
    mask_dir = os.path.join(directory, "masks")
    if not os.path.isdir(img_dir):
        raise UnreadableImageError(f"no images/ directory under {directory}")
    samples: list[Sample] = []
    names = sorted(n for n in os.listdir(img_dir) if n.lower().endswith(".png"))
    for idx, name in enumerate(names):
        stem = os.path.splitext(name)[0]
        mask_path = os.path.join(mask_dir, name)
        if not os.path.isfile(mask_path):
            raise MissingMaskError(f"no mask for image stem {stem!r}")
        try:
            with open(os.path.join(img_dir, name), "rb") as f:
                image_u8 = png_bytes_to_gray(f.read())
        except OSError as exc:
            raise UnreadableImageError(f"cannot decode image {name}: {exc}") from exc
        try:
            with open(mask_path, "rb") as f:
                mask_u8 = png_bytes_to_gray(f.read())
        except OSError as exc:
            raise UnreadableImageError(f"cannot decode mask {name}: {exc}") from exc
        if image_u8.shape != mask_u8.shape:
            raise SizeMismatchError(
                f"{stem}: image {image_u8.shape} vs mask {mask_u8.shape}"
            )
        image = (image_u8.astype(np.float32) / 255.0).astype(np.float32)
        gt = mask_u8 >= MASK_LOAD_THRESHOLD
        prompts = [derive_prompts(gt, kind) for kind in prompt_kinds] if gt.any() else []
        samples.append(Sample(sample_id=idx, image=image, gt_mask=gt, prompts=prompts))
    return samples


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def render_report(records) -> str:
    """CSV text with the fixed schema; floats at 6 decimals, blanks for
    absent optionals. Byte-deterministic for a given record list."""
    lines = [REPORT_HEADER]
    for r in records:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.step, r.sample_id, r.prompt_kind,
                    r.dsc_generalist, r.dsc_aux, r.dsc_fused, r.hd_fused,
                    r.alpha_used, r.alpha_star, r.rectified,
                    r.batch_len, r.batch_loss,
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_report(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_report(records))
