"""The frozen promptable segmenter behind a predict() contract.

Two implementations: a seeded mock that corrupts ground truth (a
simulation oracle for desk-scale experiments, never visible to the
learner) and a JSON/HTTP client so a real segmenter can plug in.
"""

from __future__ import annotations

import json
import math
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Mapping, Protocol

import numpy as np
from scipy import ndimage

from .errors import BackendUnavailableError, MalformedResponseError
from .geometry import BOX, Prompt
from .pngio import gray_to_b64

DEFAULT_LOGIT_MAGNITUDE = 6.0
# Calibrated on the default synthetic stream so box prompts land at a
# mean DSC around 0.75 and point prompts meaningfully below it.
DEFAULT_BOX_CORRUPTION = 1.4
DEFAULT_POINT_CORRUPTION = 2.2


@dataclass(frozen=True)
class GeneralistRequest:
    image: np.ndarray  # (H, W) float in [0, 1]
    prompt: Prompt
    sample_id: int

    def __post_init__(self) -> None:
        h, w = self.image.shape
        self.prompt.validate_bounds(h, w)


class Generalist(Protocol):
    def predict(self, req: GeneralistRequest) -> np.ndarray: ...


@dataclass(frozen=True)
class MockGeneralistConfig:
    seed: int = 0
    box_corruption: float = DEFAULT_BOX_CORRUPTION
    point_corruption: float = DEFAULT_POINT_CORRUPTION
    logit_magnitude: float = DEFAULT_LOGIT_MAGNITUDE

    def __post_init__(self) -> None:
        if self.box_corruption < 0 or self.point_corruption < 0:
            raise ValueError("corruption strengths must be >= 0")
        if self.logit_magnitude <= 0:
            raise ValueError("logit_magnitude must be > 0")


def _disk(radius: int) -> np.ndarray:
    if radius < 1:
        return np.ones((1, 1), dtype=bool)
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


def _shift(mask: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Translate with zero fill (no wrap-around)."""
    out = np.zeros_like(mask)
    h, w = mask.shape
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def _ellipse_blob(rng: np.random.Generator, shape, center, scale: float) -> np.ndarray:
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    ay = rng.uniform(0.08, 0.08 + 0.22) * scale + 1.5
    ax = rng.uniform(0.08, 0.08 + 0.22) * scale + 1.5
    theta = rng.uniform(0.0, math.pi)
    dy = rr - center[0]
    dx = cc - center[1]
    py = math.cos(theta) * dy + math.sin(theta) * dx
    px = -math.sin(theta) * dy + math.cos(theta) * dx
    return (py / ay) ** 2 + (px / ax) ** 2 <= 1.0


def mock_predict(
    cfg: MockGeneralistConfig, gt_mask: np.ndarray, req: GeneralistRequest
) -> np.ndarray:
    """Deterministic corruption of the ground truth into a logit map.

    The recipe mimics the failure texture of a real promptable model:
    boundary translation jitter, random-radius dilation or erosion, and
    spurious/deleted elliptical blobs near the object, topped with
    per-pixel logit noise. All randomness is derived from
    (seed, sample_id, prompt kind), so identical requests are
    bit-identical.
    """
    gt = np.asarray(gt_mask, dtype=bool)
    if gt.shape != req.image.shape:
        raise ValueError(f"gt {gt.shape} vs image {req.image.shape}")
    kind_code = 0 if req.prompt.kind == BOX else 1
    strength = cfg.box_corruption if kind_code == 0 else cfg.point_corruption
    rng = np.random.default_rng([cfg.seed, req.sample_id, kind_code])
    work = gt.copy()

    if strength > 0 and gt.any():
        # corruption severities scale with the object's equivalent radius
        obj_radius = math.sqrt(gt.sum() / math.pi)

        max_shift = int(round(0.18 * strength * obj_radius))
        if max_shift > 0:
            dr, dc = rng.integers(-max_shift, max_shift + 1, size=2)
            work = _shift(work, int(dr), int(dc))

        max_radius = int(round(0.28 * strength * obj_radius))
        radius = int(rng.integers(0, max_radius + 1)) if max_radius > 0 else 0
        if radius > 0:
            footprint = _disk(radius)
            if rng.random() < 0.5:
                work = ndimage.binary_dilation(work, structure=footprint)
            else:
                eroded = ndimage.binary_erosion(work, structure=footprint)
                if eroded.any():
                    work = eroded

        n_blobs = int(rng.poisson(0.9 * strength))
        rows, cols = np.nonzero(work if work.any() else gt)
        r_lo, r_hi = rows.min(), rows.max()
        c_lo, c_hi = cols.min(), cols.max()
        pad_r = max(3, (r_hi - r_lo) // 3)
        pad_c = max(3, (c_hi - c_lo) // 3)
        for _ in range(n_blobs):
            center = (
                rng.uniform(r_lo - pad_r, r_hi + pad_r),
                rng.uniform(c_lo - pad_c, c_hi + pad_c),
            )
            blob = _ellipse_blob(rng, gt.shape, center, strength * obj_radius)
            if rng.random() < 0.5:
                work = work | blob
            else:
                removed = work & ~blob
                if removed.any():
                    work = removed

    logits = np.where(work, cfg.logit_magnitude, -cfg.logit_magnitude)
    noise_std = strength * cfg.logit_magnitude / 4.0
    if noise_std > 0:
        logits = logits + rng.normal(0.0, noise_std, logits.shape)
    return logits.astype(np.float64)


class MockGeneralist:
    """predict() backed by per-sample ground truth (simulation only)."""

    def __init__(self, cfg: MockGeneralistConfig, gt_lookup: Mapping[int, np.ndarray]):
        self.cfg = cfg
        self._gt = gt_lookup

    def predict(self, req: GeneralistRequest) -> np.ndarray:
        return mock_predict(self.cfg, self._gt[req.sample_id], req)


def _prompt_payload(prompt: Prompt) -> dict:
    if prompt.kind == BOX:
        b = prompt.box
        return {"kind": "box", "box": [b.row0, b.col0, b.row1, b.col1], "point": None}
    return {"kind": "point", "box": None, "point": [prompt.point[0], prompt.point[1]]}


def remote_predict(endpoint: str, req: GeneralistRequest, timeout: float = 30.0) -> np.ndarray:
    """POST the request to a /predict endpoint and parse the logits."""
    h, w = req.image.shape
    body = json.dumps(
        {
            "sample_id": req.sample_id,
            "width": w,
            "height": h,
            "image_b64": gray_to_b64(req.image),
            "prompt": _prompt_payload(req.prompt),
        }
    ).encode("utf-8")
    url = endpoint.rstrip("/") + "/predict"
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, socket.timeout, TimeoutError) as exc:
        if isinstance(exc, urllib.error.HTTPError):
            raise
        raise BackendUnavailableError(f"{url}: {exc}") from exc
    try:
        rw = int(payload["width"])
        rh = int(payload["height"])
        logits = np.asarray(payload["logits"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"bad response fields: {exc}") from exc
    if (rh, rw) != (h, w) or logits.size != h * w:
        raise MalformedResponseError(
            f"expected {h}x{w} logits, got {rh}x{rw} with {logits.size} values"
        )
    logits = logits.reshape(h, w)
    if not np.all(np.isfinite(logits)):
        raise MalformedResponseError("non-finite logits in response")
    return logits


class RemoteGeneralist:
    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def predict(self, req: GeneralistRequest) -> np.ndarray:
        return remote_predict(self.endpoint, req, self.timeout)
