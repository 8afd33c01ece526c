"""Joint test-time optimization of moments and caption prefixes for one video.

Every outer iteration regenerates all N captions from scratch while the
trainable state (moment logits, per-moment soft prompts and projections,
optimizer moments) carries over. Captions are decoded in lockstep: at each
token step the vision and language losses are averaged over the still-active
captions, the pairwise IoU loss is taken over all moments, and one AdamW update
is made before every active caption emits its next token.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .backends.base import LanguageModel, Scorer, embed_frames
from .config import DatasetProfile, LossWeights, RunConfig
from .errors import NonFiniteLossError, RunError, SnapshotVersionError
from .generation import (
    GenerationState,
    HardPromptPool,
    advance,
    build_prefix,
    select_token,
    step_losses,
)
from .temporal import (
    MomentParams,
    aggregate_features,
    frame_positions,
    interval_of,
    logit,
    moments_from_tensors,
    pt_iou_loss,
    soft_mask,
)

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "zsdvc-optimizer-state"
SNAPSHOT_VERSION = 1


def init_moments(profile: DatasetProfile, n: int | None = None, width_logit: float | None = None,
                 eps: float = 1e-3) -> list[MomentParams]:
    """Centers on a uniform sigmoid-space grid over the profile range, clipped into (0, 1)."""
    n = profile.n_moments if n is None else n
    if n < 1:
        raise ValueError(f"need at least one moment, got {n}")
    lo, hi = profile.center_low, profile.center_high
    if n == 1:
        grid = [(lo + hi) / 2]
    else:
        grid = [lo + (hi - lo) * k / (n - 1) for k in range(n)]
    w = profile.width_logit if width_logit is None else width_logit
    return [MomentParams(logit(min(max(g, eps), 1 - eps)), w) for g in grid]


def _scalar(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def total_loss(vision, language, ptiou, weights: LossWeights):
    for name, value in (("vision", vision), ("language", language), ("ptiou", ptiou)):
        v = _scalar(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(f"{name} loss is not finite ({v})")
    return weights.vision * vision + weights.language * language + weights.ptiou * ptiou


def cosine_factor(step: int, horizon: int) -> float:
    t = min(step, horizon)
    return 0.5 * (1.0 + math.cos(math.pi * t / horizon))


@dataclass
class CaptionEntry:
    start: float
    end: float
    sentence: str
    interval: tuple[float, float]

    def to_prediction(self) -> dict:
        return {"timestamp": [self.start, self.end], "sentence": self.sentence}


@dataclass
class DenseCaptionResult:
    duration: float
    entries: list[CaptionEntry]
    losses: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    def to_predictions(self) -> list[dict]:
        return [e.to_prediction() for e in self.entries]


class DenseCaptioner:
    """Holds the full optimization state for one video."""

    def __init__(self, features, duration: float, config: RunConfig, scorer: Scorer, lm: LanguageModel,
                 init: Sequence[MomentParams] | None = None):
        if config.seed is None:
            raise ValueError("a seed is required for a captioning run")
        self.config = config
        self.scorer = scorer
        self.lm = lm
        self.duration = float(duration)
        self.dtype = getattr(lm, "dtype", torch.float64)
        frames = embed_frames(scorer, features)
        if frames.shape[0] < 1:
            raise ValueError("video has no frames")
        self.frames = frames.to(self.dtype)
        self.positions = frame_positions(frames.shape[0], dtype=self.dtype)

        n = config.moments
        if init is None:
            init = init_moments(config.dataset, n, config.width_logit, config.center_init_eps)
        if len(init) != n:
            raise ValueError(f"expected {n} initial moments, got {len(init)}")
        gen = torch.Generator().manual_seed(config.seed)
        self.centers = torch.tensor([float(m.c) for m in init], dtype=self.dtype, requires_grad=True)
        self.widths = torch.tensor([float(m.w) for m in init], dtype=self.dtype, requires_grad=True)
        soft_shape = (n, *lm.soft_prompt_shape(config.soft_prompt_length))
        proj_shape = (n, config.projected_tokens * lm.config.embed_dim, scorer.config.dim)
        self.soft = (config.prefix_init_std * torch.randn(soft_shape, generator=gen, dtype=torch.float64)
                     ).to(self.dtype).requires_grad_()
        self.projection = (config.projection_init_std * torch.randn(proj_shape, generator=gen, dtype=torch.float64)
                           ).to(self.dtype).requires_grad_()

        self.optimizer = torch.optim.AdamW(
            [self.centers, self.widths, self.soft, self.projection],
            lr=config.lr, betas=config.betas, weight_decay=config.weight_decay,
        )
        horizon = config.planned_updates
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda step: cosine_factor(step, horizon)
        )
        self.prompts = HardPromptPool(config.hard_prompts, seed=config.seed)
        self.iteration = 0
        self.updates = 0
        self.history: list[dict] = []
        self.captions: list[list[int]] = [[] for _ in range(n)]
        self.initial_ptiou = _scalar(self.ptiou())

    # -- model pieces -------------------------------------------------------

    def moments(self) -> list[MomentParams]:
        return moments_from_tensors(self.centers, self.widths)

    def ptiou(self):
        return pt_iou_loss(self.moments()) if self.config.moments > 1 else torch.zeros((), dtype=self.dtype)

    def moment_features(self, k: int, gamma: float):
        mask = soft_mask(MomentParams(self.centers[k], self.widths[k]), self.positions, gamma)
        pooled = aggregate_features(self.frames, mask)
        return pooled, pooled / pooled.norm().clamp_min(1e-12)

    def prefix(self, k: int, pooled, hard_prompt):
        return build_prefix(self.soft[k], self.projection[k], pooled, hard_prompt, self.config.projected_tokens)

    # -- optimization -------------------------------------------------------

    def step_objective(self, states: list[GenerationState], gamma: float):
        """(total, vision, language, ptiou) at the current decoding step; captions still running only."""
        cfg = self.config
        active = [s for s in states if not s.done]
        vision = language = 0.0
        for s in active:
            pooled, moment = self.moment_features(s.index, gamma)
            losses = step_losses(self.lm, self.scorer, s, self.prefix(s.index, pooled, s.hard_prompt),
                                 moment, cfg.n_candidates, cfg.temperature)
            vision = vision + losses.vision
            language = language + losses.language
        vision = vision / len(active)
        language = language / len(active)
        ptiou = self.ptiou()
        return total_loss(vision, language, ptiou, cfg.weights), vision, language, ptiou

    def _update(self, states: list[GenerationState], gamma: float):
        cfg = self.config
        loss, vision, language, ptiou = self.step_objective(states, gamma)

        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.updates += 1
        if cfg.width_ceiling is not None:
            with torch.no_grad():
                self.widths.clamp_(max=cfg.width_ceiling)
        record = {
            "iteration": self.iteration, "update": self.updates, "gamma": gamma,
            "lr": self.optimizer.param_groups[0]["lr"], "total": _scalar(loss),
            "vision": _scalar(vision), "language": _scalar(language), "ptiou": _scalar(ptiou),
        }
        self.history.append(record)
        return record

    @torch.no_grad()
    def _emit(self, states: list[GenerationState], gamma: float):
        for s in states:
            if s.done:
                continue
            pooled, _ = self.moment_features(s.index, gamma)
            token = select_token(self.lm, self.prefix(s.index, pooled, s.hard_prompt), s)
            advance(self.lm, s, token, self.config.max_caption_tokens)

    def run_iteration(self):
        """One outer iteration: regenerate every caption with one update per token step."""
        gamma = self.config.sharpness(self.iteration)
        states = [GenerationState(index=k, hard_prompt=self.lm.encode(self.prompts.sample()))
                  for k in range(self.config.moments)]
        step = 0
        while not all(s.done for s in states):
            try:
                self._update(states, gamma)
                self._emit(states, gamma)
            except NonFiniteLossError as exc:
                raise RunError(f"non-finite loss: {exc}", self.iteration, step, self.result()) from exc
            except RunError:
                raise
            except Exception as exc:
                raise RunError(f"step failed: {exc!r}", self.iteration, step, self.result()) from exc
            step += 1
        self.captions = [s.tokens for s in states]
        self.iteration += 1

    def run(self, until: int | None = None) -> DenseCaptionResult:
        stop = self.config.outer_iterations if until is None else min(until, self.config.outer_iterations)
        while self.iteration < stop:
            self.run_iteration()
        return self.result()

    # -- readout ------------------------------------------------------------

    def intervals(self) -> list[tuple[float, float]]:
        with torch.no_grad():
            out = []
            for m in self.moments():
                iv = interval_of(m)
                out.append((float(iv.start), float(iv.end)))
        return out

    def result(self) -> DenseCaptionResult:
        entries = []
        for (s, e), tokens in zip(self.intervals(), self.captions):
            entries.append(CaptionEntry(
                start=min(max(s * self.duration, 0.0), self.duration),
                end=min(max(e * self.duration, 0.0), self.duration),
                sentence=self.lm.decode(tokens).strip(),
                interval=(s, e),
            ))
        losses = dict(self.history[-1]) if self.history else {}
        losses["ptiou_initial"] = self.initial_ptiou
        losses["ptiou_final"] = _scalar(self.ptiou())
        return DenseCaptionResult(self.duration, entries, losses, list(self.history))

    # -- persistence --------------------------------------------------------

    def snapshot(self) -> bytes:
        state = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "params": {
                "centers": self.centers.detach().clone(),
                "widths": self.widths.detach().clone(),
                "soft": self.soft.detach().clone(),
                "projection": self.projection.detach().clone(),
            },
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "prompt_rng": self.prompts.getstate(),
            "iteration": self.iteration,
            "updates": self.updates,
            "history": self.history,
            "captions": self.captions,
            "initial_ptiou": self.initial_ptiou,
        }
        buf = io.BytesIO()
        torch.save(state, buf)
        return buf.getvalue()

    def restore(self, blob: bytes | None):
        """Load a snapshot; an empty snapshot leaves the fresh initial state in place."""
        if not blob:
            return self
        try:
            state = torch.load(io.BytesIO(blob), weights_only=False)
        except Exception as exc:
            raise SnapshotVersionError(f"unreadable optimizer snapshot: {exc}") from exc
        if not isinstance(state, dict) or state.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotVersionError("not an optimizer snapshot")
        if state.get("version") != SNAPSHOT_VERSION:
            raise SnapshotVersionError(
                f"snapshot version {state.get('version')} != supported {SNAPSHOT_VERSION}"
            )
        if state["config"] != self.config.to_dict():
            raise SnapshotVersionError("snapshot was taken under a different run config")
        with torch.no_grad():
            for name, value in state["params"].items():
                getattr(self, name).copy_(value)
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.prompts.setstate(state["prompt_rng"])
        self.iteration = state["iteration"]
        self.updates = state["updates"]
        self.history = list(state["history"])
        self.captions = [list(c) for c in state["captions"]]
        self.initial_ptiou = state["initial_ptiou"]
        return self


def run_dense_captioning(features, duration: float, config: RunConfig, scorer: Scorer, lm: LanguageModel,
                         init: Sequence[MomentParams] | None = None) -> DenseCaptionResult:
    return DenseCaptioner(features, duration, config, scorer, lm, init=init).run()
