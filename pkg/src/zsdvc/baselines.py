"""Zero-shot comparison baselines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .backends.base import Scorer, embed_frames
from .data_io import SamplingSpec
from .evaluation import load_predictions
from .optimizer import CaptionEntry, DenseCaptionResult


@dataclass(frozen=True)
class BaselineConfig:
    name: str = "caption-then-match"
    width_fraction: float = 0.3
    captioner: str = "file"  # "file" or "hook"
    beam_size: int = 8  # metadata about how external captions were produced

    def __post_init__(self):
        if not 0 < self.width_fraction <= 1:
            raise ValueError(f"width fraction must lie in (0, 1], got {self.width_fraction}")


def uniform_segments(duration: float, n: int) -> list[tuple[float, float]]:
    if n < 1:
        raise ValueError(f"need at least one segment, got {n}")
    step = duration / n
    return [(k * step, duration if k == n - 1 else (k + 1) * step) for k in range(n)]


def frame_times(n_frames: int, duration: float) -> list[float]:
    """Timestamp of each cached frame: the 1 fps convention when it fits, else bin centers."""
    sampling = SamplingSpec()
    if duration > 0 and sampling.frame_count(duration) == n_frames:
        return sampling.timestamps(duration)
    return [(j + 0.5) * duration / n_frames for j in range(n_frames)]


def caption_then_match(captions: Sequence[str], features, duration: float, scorer: Scorer,
                       width_fraction: float = 0.3, times: Sequence[float] | None = None) -> DenseCaptionResult:
    """Center each caption on its best-matching frame and give it a fixed width."""
    if not captions:
        raise ValueError("caption_then_match needs at least one caption")
    frames = embed_frames(scorer, features)
    times = list(times) if times is not None else frame_times(frames.shape[0], duration)
    text = scorer.embed_texts(list(captions)).to(frames.dtype)
    sims = text @ frames.T
    half = width_fraction * duration / 2
    entries = []
    for k, caption in enumerate(captions):
        row = sims[k]
        # first index of the maximum keeps ties on the earliest frame
        j = int((row == row.max()).nonzero()[0, 0])
        center = times[j]
        start, end = max(0.0, center - half), min(duration, center + half)
        norm = (start / duration, end / duration) if duration > 0 else (0.0, 0.0)
        entries.append(CaptionEntry(start, end, caption, norm))
    return DenseCaptionResult(duration, entries)


def ingest_external_predictions(path) -> dict[str, list[dict]]:
    """Predictions produced outside this package (shot detector + captioner pipelines)."""
    return load_predictions(path)
