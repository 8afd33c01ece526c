"""Synthetic videos with planted segments, for desk-scale runs against the mock backends."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .backends.mock import CLUSTER_WORDS, MockLM, MockScorer
from .temporal import frame_positions

PLANTED_SEGMENTS = ((0.0, 0.3), (0.35, 0.6), (0.7, 1.0))


@dataclass
class PlantedVideo:
    features: torch.Tensor
    duration: float
    segments: tuple  # normalized (start, end) per planted segment
    clusters: tuple  # cluster id per segment
    labels: list  # per-frame cluster id, -1 for background

    def cluster_words(self, segment: int) -> tuple:
        return CLUSTER_WORDS[self.clusters[segment]]

    def ground_truth(self, video_id: str = "planted") -> dict:
        """Ground truth in ActivityNet-Captions layout, one sentence per segment."""
        return {video_id: {
            "duration": self.duration,
            "timestamps": [[s * self.duration, e * self.duration] for s, e in self.segments],
            "sentences": [" ".join(self.cluster_words(i)[:2]) + "." for i in range(len(self.segments))],
        }}


def planted_video(scorer: MockScorer, n_frames: int = 60, duration: float = 60.0,
                  segments=PLANTED_SEGMENTS, clusters=(0, 1, 2), noise: float = 0.3,
                  seed: int = 0) -> PlantedVideo:
    positions = frame_positions(n_frames)
    labels = []
    for p in positions.tolist():
        label = -1
        for (s, e), c in zip(segments, clusters):
            if s <= p <= e:
                label = c
                break
        labels.append(label)
    features = scorer.planted_frames(labels, noise=noise, seed=seed)
    return PlantedVideo(features, float(duration), tuple(segments), tuple(clusters), labels)


def mock_backends(seed: int = 0) -> tuple[MockScorer, MockLM]:
    return MockScorer(seed=seed), MockLM(seed=seed)
