"""The trainable specialist: a miniature encoder-decoder conv net over
fixed-size crops, with explicit forward pass, analytic backward pass,
and a decoupled-weight-decay adaptive optimizer.

Layer stack (S = patch_size, C = in_channels, widths = [w0, w1]):

    enc1: 3x3 conv stride 2, C  -> w0, ReLU          (w0, S/2, S/2)
    enc2: 3x3 conv stride 2, w0 -> w1, ReLU          (w1, S/4, S/4)
    bott: 3x3 conv stride 1, w1 -> w1, ReLU          (w1, S/4, S/4)
    dec1: nearest x2, concat enc1 skip, 3x3 conv
          (w1+w0) -> w0, ReLU                        (w0, S/2, S/2)
    dec2: nearest x2, 3x3 conv w0 -> w0, ReLU        (w0, S,   S)
    head: 1x1 conv w0 -> 1 logit                     (S, S)

Everything is plain numpy; gradients are exact closed forms, verified
against finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, StaleCacheError

DEFAULT_PATCH_SIZE = 64
DEFAULT_WIDTHS = (16, 32)
DEFAULT_LR = 0.0005

PARAM_KEYS = (
    "enc1.w", "enc1.b",
    "enc2.w", "enc2.b",
    "bott.w", "bott.b",
    "dec1.w", "dec1.b",
    "dec2.w", "dec2.b",
    "head.w", "head.b",
)

CHECKPOINT_MAGIC = b"AUXOL1"


@dataclass(frozen=True)
class AuxConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    in_channels: int = 1
    widths: tuple[int, int] = DEFAULT_WIDTHS
    seed: int = 0

    def __post_init__(self) -> None:
        s = self.patch_size
        if s < 16 or (s & (s - 1)) != 0:
            raise ValueError(f"patch_size must be a power of two >= 16, got {s}")
        if len(self.widths) != 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be two positive stage widths, got {self.widths}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))


def param_shapes(cfg: AuxConfig) -> dict[str, tuple[int, ...]]:
    w0, w1 = cfg.widths
    c = cfg.in_channels
    return {
        "enc1.w": (w0, c, 3, 3), "enc1.b": (w0,),
        "enc2.w": (w1, w0, 3, 3), "enc2.b": (w1,),
        "bott.w": (w1, w1, 3, 3), "bott.b": (w1,),
        "dec1.w": (w0, w1 + w0, 3, 3), "dec1.b": (w0,),
        "dec2.w": (w0, w0, 3, 3), "dec2.b": (w0,),
        "head.w": (1, w0, 1, 1), "head.b": (1,),
    }


def param_count(cfg: AuxConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init(cfg: AuxConfig) -> dict[str, np.ndarray]:
    """He fan-in initialization for kernels, zero biases; seeded."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for key, shape in param_shapes(cfg).items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            params[key] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return params


# ---------------------------------------------------------------------------
# conv primitives (im2col / col2im)
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Patch matrix laid out (C*kh*kw, B*oh*ow) so the conv products are
    single large 2D gemms with no hidden transpose copies."""
    b, c, h, w = x.shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, kh, kw, b, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[
                :, :, i : i + stride * (oh - 1) + 1 : stride,
                j : j + stride * (ow - 1) + 1 : stride,
            ].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, b * oh * ow), oh, ow


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int):
    """Adjoint of _im2col: scatter-add patch gradients back to pixels."""
    b, c, h, w = x_shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(c, kh, kw, b, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :, :, i : i + stride * (oh - 1) + 1 : stride,
                j : j + stride * (ow - 1) + 1 : stride,
            ] += d6[:, i, j].transpose(1, 0, 2, 3)
    return dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp


def _conv_forward(x, w, b, stride, pad):
    bsz = x.shape[0]
    cols, oh, ow = _im2col(x, w.shape[2], w.shape[3], stride, pad)
    wmat = w.reshape(w.shape[0], -1)
    out = wmat @ cols + b[:, None]
    out = out.reshape(w.shape[0], bsz, oh, ow).transpose(1, 0, 2, 3)
    return out, cols


def _conv_backward(dout, x_shape, w, cols, stride, pad):
    b, co = dout.shape[:2]
    dout_mat = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(co, -1)
    dw = (dout_mat @ cols.T).reshape(w.shape)
    db = dout_mat.sum(axis=1)
    wmat = w.reshape(co, -1)
    dcols = wmat.T @ dout_mat
    dx = _col2im(dcols, x_shape, w.shape[2], w.shape[3], stride, pad)
    return dx, dw, db


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2_backward(d: np.ndarray) -> np.ndarray:
    b, c, h, w = d.shape
    return d.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def forward_batch(params: dict[str, np.ndarray], x: np.ndarray):
    """Run the net on a (B, C, S, S) batch.

    Returns (logits (B, S, S), cache). The cache holds everything the
    backward pass needs and is tied to this params dict.
    """
    x = np.ascontiguousarray(x, dtype=params["enc1.w"].dtype)
    if x.ndim != 4 or x.shape[1] != params["enc1.w"].shape[1]:
        raise ShapeMismatchError(f"expected (B, {params['enc1.w'].shape[1]}, S, S), got {x.shape}")
    if x.shape[2] != x.shape[3] or x.shape[2] % 4 != 0:
        raise ShapeMismatchError(f"patch must be square with side divisible by 4, got {x.shape}")
    cache: dict = {"params": params, "x_shape": x.shape}

    pre1, cache["enc1.cols"] = _conv_forward(x, params["enc1.w"], params["enc1.b"], 2, 1)
    cache["pre1"] = pre1
    a1 = np.maximum(pre1, 0.0)
    cache["a1_shape"] = a1.shape

    pre2, cache["enc2.cols"] = _conv_forward(a1, params["enc2.w"], params["enc2.b"], 2, 1)
    cache["pre2"] = pre2
    a2 = np.maximum(pre2, 0.0)
    cache["a2_shape"] = a2.shape

    pre3, cache["bott.cols"] = _conv_forward(a2, params["bott.w"], params["bott.b"], 1, 1)
    cache["pre3"] = pre3
    a3 = np.maximum(pre3, 0.0)

    u1 = _upsample2(a3)
    cat1 = np.concatenate([u1, a1], axis=1)
    cache["cat1_shape"] = cat1.shape
    pre4, cache["dec1.cols"] = _conv_forward(cat1, params["dec1.w"], params["dec1.b"], 1, 1)
    cache["pre4"] = pre4
    a4 = np.maximum(pre4, 0.0)

    u2 = _upsample2(a4)
    cache["u2_shape"] = u2.shape
    pre5, cache["dec2.cols"] = _conv_forward(u2, params["dec2.w"], params["dec2.b"], 1, 1)
    cache["pre5"] = pre5
    a5 = np.maximum(pre5, 0.0)
    cache["a5_shape"] = a5.shape

    logits, cache["head.cols"] = _conv_forward(a5, params["head.w"], params["head.b"], 1, 0)
    return logits[:, 0], cache


def forward(params: dict[str, np.ndarray], patch: np.ndarray):
    """Single-patch convenience wrapper: (C, S, S) -> ((S, S), cache)."""
    if patch.ndim != 3:
        raise ShapeMismatchError(f"expected (C, S, S), got {patch.shape}")
    logits, cache = forward_batch(params, patch[None])
    return logits[0], cache


def backward(
    params: dict[str, np.ndarray], cache: dict, loss_grad: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. every parameter.

    loss_grad is d(loss)/d(logits), shaped like the forward output
    ((B, S, S) or (S, S) for the single-patch wrapper).
    """
    if cache.get("params") is not params:
        raise StaleCacheError("cache was produced by a different forward pass")
    if loss_grad.ndim == 2:
        loss_grad = loss_grad[None]
    dlogits = np.ascontiguousarray(loss_grad, dtype=params["enc1.w"].dtype)[:, None]

    grads: dict[str, np.ndarray] = {}
    da5, grads["head.w"], grads["head.b"] = _conv_backward(
        dlogits, cache["a5_shape"], params["head.w"], cache["head.cols"], 1, 0
    )
    dpre5 = da5 * (cache["pre5"] > 0)
    du2, grads["dec2.w"], grads["dec2.b"] = _conv_backward(
        dpre5, cache["u2_shape"], params["dec2.w"], cache["dec2.cols"], 1, 1
    )
    da4 = _upsample2_backward(du2)
    dpre4 = da4 * (cache["pre4"] > 0)
    dcat1, grads["dec1.w"], grads["dec1.b"] = _conv_backward(
        dpre4, cache["cat1_shape"], params["dec1.w"], cache["dec1.cols"], 1, 1
    )
    w1 = params["bott.w"].shape[0]
    du1 = dcat1[:, :w1]
    da1_skip = dcat1[:, w1:]
    da3 = _upsample2_backward(du1)
    dpre3 = da3 * (cache["pre3"] > 0)
    da2, grads["bott.w"], grads["bott.b"] = _conv_backward(
        dpre3, cache["a2_shape"], params["bott.w"], cache["bott.cols"], 1, 1
    )
    dpre2 = da2 * (cache["pre2"] > 0)
    da1, grads["enc2.w"], grads["enc2.b"] = _conv_backward(
        dpre2, cache["a1_shape"], params["enc2.w"], cache["enc2.cols"], 2, 1
    )
    da1 += da1_skip
    dpre1 = da1 * (cache["pre1"] > 0)
    _, grads["enc1.w"], grads["enc1.b"] = _conv_backward(
        dpre1, cache["x_shape"], params["enc1.w"], cache["enc1.cols"], 2, 1
    )
    return grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_optimizer(params: dict[str, np.ndarray], lr: float = DEFAULT_LR,
                   weight_decay: float = 0.01) -> OptimizerState:
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
    return OptimizerState(m=zeros(), v=zeros(), lr=lr, weight_decay=weight_decay)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One decoupled-weight-decay update; returns fresh params and state.

    param <- param - lr * (mhat / (sqrt(vhat) + eps) + wd * param)
    """
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for key, p in params.items():
        g = grads[key].astype(p.dtype)
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        update = mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p
        new_params[key] = (p - state.lr * update).astype(p.dtype)
        new_m[key] = m
        new_v[key] = v
    new_state = OptimizerState(
        m=new_m, v=new_v, step=t,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2,
        eps=state.eps, weight_decay=state.weight_decay,
    )
    return new_params, new_state


# ---------------------------------------------------------------------------
# checkpoint + checksum
# ---------------------------------------------------------------------------

def param_checksum(params: dict[str, np.ndarray]) -> str:
    """Stable 64-bit hex digest of the parameter stream."""
    h = hashlib.blake2b(digest_size=8)
    for key in PARAM_KEYS:
        h.update(np.ascontiguousarray(params[key], dtype=np.float32).tobytes())
    return h.hexdigest()


def save_checkpoint(
    path,
    cfg: AuxConfig,
    params: dict[str, np.ndarray],
    opt: OptimizerState | None = None,
) -> None:
    """Versioned binary checkpoint; round-trips bit-exactly."""
    header = {
        "config": {
            "patch_size": cfg.patch_size,
            "in_channels": cfg.in_channels,
            "widths": list(cfg.widths),
            "seed": cfg.seed,
        },
        "param_keys": list(PARAM_KEYS),
        "opt": None
        if opt is None
        else {
            "step": opt.step, "lr": opt.lr, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "weight_decay": opt.weight_decay,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for key in PARAM_KEYS:
            f.write(np.ascontiguousarray(params[key], dtype="<f4").tobytes())
        if opt is not None:
            for store in (opt.m, opt.v):
                for key in PARAM_KEYS:
                    f.write(np.ascontiguousarray(store[key], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (cfg, params, opt_state_or_None)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a specialist checkpoint: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        cfg = AuxConfig(
            patch_size=header["config"]["patch_size"],
            in_channels=header["config"]["in_channels"],
            widths=tuple(header["config"]["widths"]),
            seed=header["config"]["seed"],
        )
        shapes = param_shapes(cfg)

        def read_store():
            store = {}
            for key in header["param_keys"]:
                shape = shapes[key]
                n = int(np.prod(shape))
                buf = f.read(4 * n)
                arr = np.frombuffer(buf, dtype="<f4").reshape(shape)
                store[key] = arr.astype(np.float32, copy=True)
            return store

        params = read_store()
        opt = None
        if header["opt"] is not None:
            m = read_store()
            v = read_store()
            o = header["opt"]
            opt = OptimizerState(
                m=m, v=v, step=o["step"], lr=o["lr"], beta1=o["beta1"],
                beta2=o["beta2"], eps=o["eps"], weight_decay=o["weight_decay"],
            )
    return cfg, params, opt
