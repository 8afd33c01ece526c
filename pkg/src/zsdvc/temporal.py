"""Differentiable temporal moments.

A moment is two unconstrained logits, a center ``c`` and a width ``w``. Their
sigmoids place the moment in normalized video time, where 0 is the first frame
and 1 the last. Every function here works on plain floats and on torch tensors;
with tensors the result stays on the autograd graph.

Mask orientation: the mask is ``sigmoid(gamma * (w/2 - |p - c|))``, i.e. close to
1 inside the moment, exactly 0.5 on its boundary and close to 0 far outside.
Writing the distance term first (``|p - c| - w/2``) would invert that, so the
inside-high orientation is the one used throughout.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import torch

from .errors import InvalidParameterError, ShapeError

Scalar = Union[float, torch.Tensor]


@dataclass
class MomentParams:
    c: Scalar
    w: Scalar

    def __post_init__(self):
        for name in ("c", "w"):
            v = getattr(self, name)
            ok = bool(torch.isfinite(v).all()) if torch.is_tensor(v) else math.isfinite(v)
            if not ok:
                raise InvalidParameterError(f"moment logit {name} is not finite: {v!r}")


class Interval(NamedTuple):
    start: Scalar
    end: Scalar

    @property
    def length(self):
        return self.end - self.start


@dataclass(frozen=True)
class SharpnessSchedule:
    initial: float = 10.0
    increment: float = 1.0

    def __post_init__(self):
        if not self.initial > 0 or self.increment < 0:
            raise InvalidParameterError(
                f"sharpness schedule needs initial > 0 and increment >= 0, got {self}"
            )

    def at(self, iteration: int) -> float:
        return self.initial + iteration * self.increment


def _sigmoid(x):
    if torch.is_tensor(x):
        return torch.sigmoid(x)
    # numerically stable for large |x|
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def normalize_params(params: MomentParams):
    """Return ``(sigmoid(c), sigmoid(w))``."""
    for v in (params.c, params.w):
        ok = bool(torch.isfinite(v).all()) if torch.is_tensor(v) else math.isfinite(v)
        if not ok:
            raise InvalidParameterError(f"non-finite moment logit: {v!r}")
    return _sigmoid(params.c), _sigmoid(params.w)


def frame_positions(n_frames: int, dtype=torch.float64) -> torch.Tensor:
    """Endpoint-inclusive uniform grid over [0, 1]; a single frame sits at 0.5."""
    if n_frames <= 0:
        raise InvalidParameterError(f"frame count must be positive, got {n_frames}")
    if n_frames == 1:
        return torch.full((1,), 0.5, dtype=dtype)
    return torch.arange(n_frames, dtype=dtype) / (n_frames - 1)


def soft_mask(params: MomentParams, positions: torch.Tensor, gamma: float) -> torch.Tensor:
    if not gamma > 0:
        raise InvalidParameterError(f"sharpness must be positive, got {gamma}")
    c, w = normalize_params(params)
    return torch.sigmoid(gamma * (w / 2 - torch.abs(positions - c)))


def aggregate_features(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mask-weighted mean of the rows of ``features`` (L x D)."""
    if features.dim() != 2 or mask.dim() != 1 or features.shape[0] != mask.shape[0]:
        raise ShapeError(
            f"features {tuple(features.shape)} and mask {tuple(mask.shape)} do not agree"
        )
    return (mask @ features) / mask.sum()


def interval_of(params: MomentParams) -> Interval:
    """Hard readout: the 0.5 level set of the mask, clipped to [0, 1]."""
    c, w = normalize_params(params)
    if torch.is_tensor(c) or torch.is_tensor(w):
        c, w = torch.as_tensor(c), torch.as_tensor(w)
        return Interval(torch.clamp(c - w / 2, min=0.0), torch.clamp(c + w / 2, max=1.0))
    return Interval(max(0.0, c - w / 2), min(1.0, c + w / 2))


def temporal_iou(a, b):
    """Intersection over union of two (start, end) intervals.

    Two zero-length intervals score 1 when they coincide and 0 otherwise.
    """
    if any(torch.is_tensor(v) for v in (*a[:2], *b[:2])):
        sa, ea, sb, eb = (torch.as_tensor(v, dtype=torch.float64) for v in (*a[:2], *b[:2]))
        inter = torch.clamp(torch.minimum(ea, eb) - torch.maximum(sa, sb), min=0.0)
        union = (ea - sa) + (eb - sb) - inter
        same = ((sa == sb) & (ea == eb)).to(union.dtype)
        safe = torch.where(union > 0, union, torch.ones_like(union))
        return torch.where(union > 0, inter / safe, same)
    (sa, ea), (sb, eb) = a[:2], b[:2]
    inter = max(0, min(ea, eb) - max(sa, sb))
    union = (ea - sa) + (eb - sb) - inter
    if union <= 0:
        return 1 if (sa == sb and ea == eb) else 0
    return inter / union


def pt_iou_loss(moments: Sequence[MomentParams]):
    """Mean temporal IoU over all unordered pairs of moments (0 for a single moment)."""
    if len(moments) < 2:
        return 0.0
    intervals = [interval_of(m) for m in moments]
    total = 0.0
    for i, j in itertools.combinations(range(len(intervals)), 2):
        total = total + temporal_iou(intervals[i], intervals[j])
    return total / math.comb(len(intervals), 2)


def moments_from_tensors(centers: torch.Tensor, widths: torch.Tensor) -> list[MomentParams]:
    return [MomentParams(centers[k], widths[k]) for k in range(centers.shape[0])]
