"""The streaming step loop: generalist inference, prompt-derived crop,
specialist inference, fusion, expert feedback, online-batch training,
and per-step bookkeeping.

A step runs in two phases so a human can sit in the middle:
`step_infer` produces the fused output (stages driven purely by the
current state, before any learning), and `step_finalize` applies the
feedback decision. `step` glues both together for simulated policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import auxnet
from .errors import MissingGroundTruthError
from .fusion import AlphaTracker, fuse, optimal_alpha
from .generalist import Generalist, GeneralistRequest
from .geometry import (
    BOX,
    DEFAULT_CROP_PAD,
    DEFAULT_FALLBACK_SIZE,
    Prompt,
    binarize,
    crop,
    paste_back,
    prompt_to_crop_rect,
    resize_bilinear,
)
from .metrics import dice_coefficient, dice_loss, dice_loss_batch, hausdorff_distance
from .online_batch import BatchEntry, OnlineBatch

UPDATE_ONLINE_BATCH = "online_batch"
UPDATE_SINGLE_SAMPLE = "single_sample"
FUSION_ADAPTIVE = "adaptive"
FUSION_FIXED = "fixed"

POLICY_FULL = "full"
POLICY_NONE = "none"
POLICY_FRACTION = "fraction"
POLICY_THRESHOLD = "threshold"
POLICY_INTERACTIVE = "interactive"


@dataclass(frozen=True)
class ExpertPolicy:
    kind: str = POLICY_FULL
    fraction: float | None = None  # for POLICY_FRACTION, in (0, 1)
    threshold: float | None = None  # for POLICY_THRESHOLD, in (0, 1)

    def __post_init__(self) -> None:
        kinds = (POLICY_FULL, POLICY_NONE, POLICY_FRACTION, POLICY_THRESHOLD, POLICY_INTERACTIVE)
        if self.kind not in kinds:
            raise ValueError(f"unknown expert policy {self.kind!r}")
        if self.kind == POLICY_FRACTION and not (self.fraction and 0.0 < self.fraction < 1.0):
            raise ValueError("fraction policy needs fraction in (0, 1)")
        if self.kind == POLICY_THRESHOLD and not (self.threshold and 0.0 < self.threshold < 1.0):
            raise ValueError("threshold policy needs threshold in (0, 1)")


def decide_rectify(policy: ExpertPolicy, step_index: int, dsc_fused: float | None = None) -> bool:
    """Whether the expert rectifies this step.

    Fraction uses a deterministic stride on the 1-based step number n:
    rectify iff floor(n*p) > floor((n-1)*p), which hits exactly the
    long-run rate p (e.g. p=0.25 fires on 0-based steps 3, 7, 11, ...).
    """
    if policy.kind == POLICY_FULL:
        return True
    if policy.kind == POLICY_NONE:
        return False
    if policy.kind == POLICY_FRACTION:
        n = step_index + 1
        return math.floor(n * policy.fraction) > math.floor((n - 1) * policy.fraction)
    if policy.kind == POLICY_THRESHOLD:
        if dsc_fused is None:
            raise MissingGroundTruthError("threshold policy needs the fused DSC")
        return dsc_fused < policy.threshold
    raise ValueError(f"decide_rectify does not apply to policy {policy.kind!r}")


@dataclass(frozen=True)
class EngineConfig:
    k: int = 32  # online-batch capacity
    window: int = 5  # alpha tracker length
    grid_points: int = 101
    lr: float = auxnet.DEFAULT_LR
    weight_decay: float = 0.01
    update_mode: str = UPDATE_ONLINE_BATCH
    fusion_mode: str = FUSION_ADAPTIVE
    fixed_alpha: float = 0.5
    refine_input: bool = False
    expert_policy: ExpertPolicy = field(default_factory=ExpertPolicy)
    seed: int = 0
    patch_size: int = auxnet.DEFAULT_PATCH_SIZE
    widths: tuple[int, int] = auxnet.DEFAULT_WIDTHS
    crop_pad: int = DEFAULT_CROP_PAD
    fallback_size: int = DEFAULT_FALLBACK_SIZE
    steps_per_update: int = 1
    refine_logit_scale: float = 6.0  # generalist-channel normalizer
    per_prompt_tracker: bool = False  # separate alpha windows per prompt kind

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= self.fixed_alpha <= 1.0:
            raise ValueError("fixed_alpha must be in [0, 1]")
        if self.update_mode not in (UPDATE_ONLINE_BATCH, UPDATE_SINGLE_SAMPLE):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.fusion_mode not in (FUSION_ADAPTIVE, FUSION_FIXED):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.steps_per_update < 1:
            raise ValueError("steps_per_update must be >= 1")


@dataclass
class StepRecord:
    step: int
    sample_id: int
    prompt_kind: str
    dsc_generalist: float | None
    dsc_aux: float | None
    dsc_fused: float | None
    hd_fused: float | None
    alpha_used: float
    alpha_star: float | None
    rectified: bool
    batch_len: int
    batch_loss: float | None


@dataclass
class PendingStep:
    """A step parked after inference, awaiting the feedback decision."""

    sample_id: int
    prompt: Prompt
    image: np.ndarray
    gt_mask: np.ndarray | None
    generalist_logits: np.ndarray
    rect: object
    patch: np.ndarray  # (C, S, S) specialist input
    aux_local: np.ndarray  # (S, S) crop-resolution logits
    aux_logits: np.ndarray  # full-resolution pasted-back logits
    alpha_used: float
    prob: np.ndarray
    fused_mask: np.ndarray
    dsc_generalist: float | None
    dsc_aux: float | None
    dsc_fused: float | None
    hd_fused: float | None


class Engine:
    """Single sequential learner; all mutation happens inside a step."""

    def __init__(self, cfg: EngineConfig, generalist: Generalist):
        self.cfg = cfg
        self.generalist = generalist
        in_channels = 2 if cfg.refine_input else 1
        self.aux_cfg = auxnet.AuxConfig(
            patch_size=cfg.patch_size,
            in_channels=in_channels,
            widths=cfg.widths,
            seed=cfg.seed,
        )
        self.params = auxnet.init(self.aux_cfg)
        self.opt_state = auxnet.init_optimizer(
            self.params, lr=cfg.lr, weight_decay=cfg.weight_decay
        )
        self.batch = OnlineBatch(capacity=cfg.k)
        self.tracker = AlphaTracker(window=cfg.window)
        self._kind_trackers: dict[str, AlphaTracker] = {}
        self.step_index = 0
        self.records: list[StepRecord] = []

    def _tracker_for(self, prompt_kind: str) -> AlphaTracker:
        if not self.cfg.per_prompt_tracker:
            return self.tracker
        if prompt_kind not in self._kind_trackers:
            self._kind_trackers[prompt_kind] = AlphaTracker(window=self.cfg.window)
        return self._kind_trackers[prompt_kind]

    # -- inference phase ----------------------------------------------------

    def _build_patch(self, image, generalist_logits, rect, prompt) -> np.ndarray:
        size = self.cfg.patch_size
        img_patch = resize_bilinear(crop(image, rect), size, size)
        channels = [img_patch]
        if self.cfg.refine_input:
            # the generalist channel is meaningful only for box prompts;
            # point prompts get zeros so the net shape stays fixed
            if prompt.kind == BOX:
                logit_patch = resize_bilinear(crop(generalist_logits, rect), size, size)
                channels.append(logit_patch / self.cfg.refine_logit_scale)
            else:
                channels.append(np.zeros((size, size)))
        return np.stack(channels).astype(np.float32)

    def step_infer(
        self,
        image: np.ndarray,
        prompt: Prompt,
        sample_id: int,
        gt_mask: np.ndarray | None = None,
    ) -> PendingStep:
        req = GeneralistRequest(image=image, prompt=prompt, sample_id=sample_id)
        s = self.generalist.predict(req)
        rect = prompt_to_crop_rect(
            prompt, s, pad=self.cfg.crop_pad, fallback_size=self.cfg.fallback_size
        )
        patch = self._build_patch(image, s, rect, prompt)
        aux_local, _ = auxnet.forward(self.params, patch)
        h, w = image.shape
        u = paste_back(aux_local, rect, h, w)

        alpha = (
            self._tracker_for(prompt.kind).value()
            if self.cfg.fusion_mode == FUSION_ADAPTIVE
            else self.cfg.fixed_alpha
        )
        prob, fused_mask = fuse(s, u, alpha)

        dsc_gen = dsc_aux = dsc_fused = hd_fused = None
        if gt_mask is not None:
            dsc_gen = dice_coefficient(binarize(s), gt_mask)
            dsc_aux = dice_coefficient(binarize(u), gt_mask)
            dsc_fused = dice_coefficient(fused_mask, gt_mask)
            hd_fused = hausdorff_distance(fused_mask, gt_mask)

        return PendingStep(
            sample_id=sample_id,
            prompt=prompt,
            image=image,
            gt_mask=gt_mask,
            generalist_logits=s,
            rect=rect,
            patch=patch,
            aux_local=aux_local,
            aux_logits=u,
            alpha_used=alpha,
            prob=prob,
            fused_mask=fused_mask,
            dsc_generalist=dsc_gen,
            dsc_aux=dsc_aux,
            dsc_fused=dsc_fused,
            hd_fused=hd_fused,
        )

    # -- feedback phase -----------------------------------------------------

    def _train_online_batch(self) -> float:
        pairs = self.batch.snapshot()
        xb = np.stack([p for p, _ in pairs])
        yb = np.stack([t for _, t in pairs]).astype(np.float64)
        losses = None
        for _ in range(self.cfg.steps_per_update):
            logits, cache = auxnet.forward_batch(self.params, xb)
            losses, grads = dice_loss_batch(logits, yb)
            param_grads = auxnet.backward(self.params, cache, grads / len(losses))
            self.params, self.opt_state = auxnet.adamw_step(
                self.params, param_grads, self.opt_state
            )
            self.batch.refresh_losses(losses.tolist())  # pre-update losses
        return float(losses.mean())

    def _train_single_sample(self, patch, target) -> float:
        loss = None
        for _ in range(self.cfg.steps_per_update):
            logits, cache = auxnet.forward_batch(self.params, patch[None])
            losses, grads = dice_loss_batch(logits, target[None].astype(np.float64))
            loss = float(losses[0])
            param_grads = auxnet.backward(self.params, cache, grads)
            self.params, self.opt_state = auxnet.adamw_step(
                self.params, param_grads, self.opt_state
            )
        return loss

    def step_finalize(self, pending: PendingStep, rectified_mask: np.ndarray | None) -> StepRecord:
        """Complete a parked step. rectified_mask None means no feedback."""
        alpha_star = None
        batch_loss = None
        rectified = rectified_mask is not None

        dsc_gen = pending.dsc_generalist
        dsc_aux = pending.dsc_aux
        dsc_fused = pending.dsc_fused
        hd_fused = pending.hd_fused

        if rectified:
            y = np.asarray(rectified_mask, dtype=bool)
            if y.shape != pending.image.shape:
                raise ValueError(f"rectified mask {y.shape} vs image {pending.image.shape}")
            if pending.gt_mask is None:
                # interactive sessions score against the expert's mask
                dsc_gen = dice_coefficient(binarize(pending.generalist_logits), y)
                dsc_aux = dice_coefficient(binarize(pending.aux_logits), y)
                dsc_fused = dice_coefficient(pending.fused_mask, y)
                hd_fused = hausdorff_distance(pending.fused_mask, y)

            size = self.cfg.patch_size
            rect = pending.rect
            target = resize_bilinear(crop(y.astype(np.float64), rect), size, size) >= 0.5
            loss, _ = dice_loss(pending.aux_local, target.astype(np.float64))
            self.batch.admit(
                BatchEntry(
                    patch=pending.patch,
                    target=target,
                    loss=loss,
                    insert_step=self.step_index,
                )
            )
            if self.cfg.update_mode == UPDATE_ONLINE_BATCH:
                batch_loss = self._train_online_batch()
            else:
                batch_loss = self._train_single_sample(pending.patch, target)

            if self.cfg.fusion_mode == FUSION_ADAPTIVE:
                alpha_star, _ = optimal_alpha(
                    pending.generalist_logits,
                    pending.aux_logits,
                    y,
                    grid_points=self.cfg.grid_points,
                )
                self._tracker_for(pending.prompt.kind).push(alpha_star)

        record = StepRecord(
            step=self.step_index,
            sample_id=pending.sample_id,
            prompt_kind=pending.prompt.kind,
            dsc_generalist=dsc_gen,
            dsc_aux=dsc_aux,
            dsc_fused=dsc_fused,
            hd_fused=hd_fused,
            alpha_used=pending.alpha_used,
            alpha_star=alpha_star,
            rectified=rectified,
            batch_len=len(self.batch),
            batch_loss=batch_loss,
        )
        self.step_index += 1
        self.records.append(record)
        return record

    # -- simulated policies -------------------------------------------------

    def step(
        self,
        image: np.ndarray,
        prompt: Prompt,
        sample_id: int,
        gt_mask: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray, StepRecord]:
        """One full inference + simulated-feedback step.

        Returns (prob_map, fused_mask, record); the returned output is
        always the pre-learning fusion.
        """
        policy = self.cfg.expert_policy
        if policy.kind == POLICY_INTERACTIVE:
            raise ValueError("interactive policy is driven via step_infer/step_finalize")
        if gt_mask is None and policy.kind not in (POLICY_NONE,):
            raise MissingGroundTruthError(f"policy {policy.kind!r} needs ground truth")
        pending = self.step_infer(image, prompt, sample_id, gt_mask)
        wants = decide_rectify(policy, self.step_index, pending.dsc_fused)
        record = self.step_finalize(pending, gt_mask if wants else None)
        return pending.prob, pending.fused_mask, record

    def param_checksum(self) -> str:
        return auxnet.param_checksum(self.params)


def run_stream_engine(
    cfg: EngineConfig, samples, generalist: Generalist
) -> tuple[Engine, list[StepRecord]]:
    """Iterate samples in order, prompts within each sample in index
    order, one step per (sample, prompt). Deterministic given cfg.seed
    and the generalist. Returns the engine for checkpointing."""
    engine = Engine(cfg, generalist)
    for sample in samples:
        if not sample.prompts:
            raise ValueError(f"sample {sample.sample_id} carries no prompt")
        for prompt in sample.prompts:
            engine.step(sample.image, prompt, sample.sample_id, sample.gt_mask)
    return engine, engine.records


def run_stream(cfg: EngineConfig, samples, generalist: Generalist) -> list[StepRecord]:
    return run_stream_engine(cfg, samples, generalist)[1]


def make_mock_generalist(samples, seed: int = 0, box_corruption: float | None = None,
                         point_corruption: float | None = None):
    """Mock backed by the stream's ground truth (simulation only)."""
    from .generalist import MockGeneralist, MockGeneralistConfig

    kwargs = {"seed": seed}
    if box_corruption is not None:
        kwargs["box_corruption"] = box_corruption
    if point_corruption is not None:
        kwargs["point_corruption"] = point_corruption
    cfg = MockGeneralistConfig(**kwargs)
    return MockGeneralist(cfg, {s.sample_id: s.gt_mask for s in samples})
