"""Small deterministic backends for tests and desk-scale runs.

The scorer and the language model share one 64-word vocabulary. A handful of
words belong to planted "clusters" (red things, blue things, ...); the scorer
maps each cluster to its own direction in embedding space and the language
model ties its output layer to token embeddings that share the same cluster
structure, so pushing the prefix toward a cluster raises all its words at once.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from ..errors import InvalidParameterError
from .base import LMConfig, PrefixContext, ScorerConfig, TextLike

CLUSTER_WORDS = (
    ("red", "square", "tomato", "apple", "fire"),
    ("blue", "ocean", "water", "sky", "swimming"),
    ("green", "grass", "tree", "forest", "field"),
    ("yellow", "sun", "banana", "sand", "desert"),
)
HARD_PROMPT_WORDS = ("Video", "Photo", "Picture", "Image", "showing", "shows", "of")
GENERAL_WORDS = (
    "a", "the", "an", "is", "are", "with", "and", "in", "on", "at", "to", "from",
    "person", "people", "man", "woman", "child", "dog", "cat", "car", "table", "room",
    "playing", "holding", "walking", "standing", "looking", "near", "small", "large",
    "bright", "dark", "scene", "outdoors", "indoors", "some",
)
PERIOD = "."

MOCK_VOCAB: tuple[str, ...] = (
    (PERIOD,) + HARD_PROMPT_WORDS + tuple(w for group in CLUSTER_WORDS for w in group) + GENERAL_WORDS
)
assert len(MOCK_VOCAB) == 64 and len(set(MOCK_VOCAB)) == 64

_INDEX = {w: i for i, w in enumerate(MOCK_VOCAB)}


def word_cluster(word: str) -> int | None:
    for c, group in enumerate(CLUSTER_WORDS):
        if word in group:
            return c
    return None


def tokenize(text: str) -> list[str]:
    return text.replace(PERIOD, f" {PERIOD} ").split()


def _orthonormal(gen: torch.Generator, dim: int, count: int) -> torch.Tensor:
    q, _ = torch.linalg.qr(torch.randn(dim, dim, generator=gen, dtype=torch.float64))
    return q[:, :count].T.contiguous()


class MockScorer:
    """Bag-of-words text encoder with planted cluster directions.

    Directions 0..3 are the clusters, 4 is the background (frames outside any
    planted segment). Cluster words sit near their cluster direction; other
    words are random directions confined to the remaining subspace.
    """

    n_clusters = len(CLUSTER_WORDS)

    def __init__(self, seed: int = 0, dim: int = 16, temperature: float = 1.0,
                 word_noise: float = 0.25, function_word_weight: float = 0.2,
                 logit_scale: float = 10.0, model_id: str = "mock-scorer"):
        self.config = ScorerConfig(dim=dim, temperature=temperature, model_id=model_id,
                                   logit_scale=logit_scale)
        gen = torch.Generator().manual_seed(seed)
        basis = _orthonormal(gen, dim, dim)
        self.cluster_directions = basis[: self.n_clusters]
        self.background_direction = basis[self.n_clusters]
        rest = basis[self.n_clusters + 1:]
        self._free = rest

        dirs = torch.empty(len(MOCK_VOCAB), dim, dtype=torch.float64)
        for i, word in enumerate(MOCK_VOCAB):
            c = word_cluster(word)
            noise = torch.randn(rest.shape[0], generator=gen, dtype=torch.float64) @ rest
            if c is None:
                v = noise
                weight = function_word_weight
            else:
                v = self.cluster_directions[c] + word_noise * noise / noise.norm()
                weight = 1.0
            dirs[i] = weight * v / v.norm()
        self.word_directions = dirs

    def _ids(self, text: TextLike) -> list[int]:
        words = tokenize(text) if isinstance(text, str) else list(text)
        return [_INDEX[w] for w in words if w in _INDEX]

    def embed_texts(self, texts: Sequence[TextLike]) -> torch.Tensor:
        counts = np.zeros((len(texts), len(MOCK_VOCAB)))
        for row, text in enumerate(texts):
            np.add.at(counts[row], self._ids(text), 1.0)
        out = torch.from_numpy(counts) @ self.word_directions
        # texts with no known word stay at the zero vector
        return out / out.norm(dim=1, keepdim=True).clamp_min(1e-12)

    def embed_frames(self, raw: torch.Tensor) -> torch.Tensor:
        raw = raw.to(torch.float64)
        return raw / raw.norm(dim=1, keepdim=True).clamp_min(1e-12)

    def embed_images(self, images) -> torch.Tensor:
        """Mean R, G, B weight cluster directions 0, 1, 2; a constant share goes to the background."""
        rows = []
        for img in images:
            rgb = torch.as_tensor(img, dtype=torch.float64).reshape(-1, 3).mean(0) / 255.0
            v = rgb @ self.cluster_directions[:3] + 0.1 * self.background_direction
            rows.append(v / v.norm().clamp_min(1e-12))
        return torch.stack(rows) if rows else torch.zeros(0, self.config.dim, dtype=torch.float64)

    def planted_frames(self, labels: Sequence[int], noise: float = 0.3, seed: int = 0) -> torch.Tensor:
        """Raw frame features: label ``c >= 0`` is cluster ``c``, ``-1`` is background.

        Noise lives in the subspace orthogonal to every planted direction, so
        two frames of one label have cosine at least (1 - noise^2) / (1 + noise^2)
        and frames of different labels at most noise^2 / (1 + noise^2).
        """
        gen = torch.Generator().manual_seed(seed)
        frames = torch.empty(len(labels), self.config.dim, dtype=torch.float64)
        for j, c in enumerate(labels):
            base = self.background_direction if c < 0 else self.cluster_directions[c]
            eps = torch.randn(self._free.shape[0], generator=gen, dtype=torch.float64) @ self._free
            frames[j] = base + noise * eps / eps.norm()
        return frames


class MockLM:
    """Bigram language model with an additive prefix bias.

    ``logits = bigram[last token] + bias_scale * E @ mean(learned prefix slots)``
    where ``E`` is the token embedding table (tied output layer) and the learned
    slots are the soft prompt (key and value averaged over layers) followed by
    the projected video tokens. An all-zero learned prefix adds nothing, which
    makes it indistinguishable from no prefix.
    """

    dtype = torch.float64

    def __init__(self, seed: int = 0, embed_dim: int = 16, n_layers: int = 1,
                 bigram_scale: float = 2.0, period_bias: float = -0.5,
                 bias_scale: float = 4.0, model_id: str = "mock-lm"):
        self.config = LMConfig(vocab_size=len(MOCK_VOCAB), embed_dim=embed_dim,
                               n_layers=n_layers, model_id=model_id)
        self.bias_scale = bias_scale
        gen = torch.Generator().manual_seed(seed + 1)
        v = len(MOCK_VOCAB)
        bigram = bigram_scale * torch.randn(v, v, generator=gen, dtype=torch.float64)
        bigram[:, _INDEX[PERIOD]] += period_bias
        self.bigram = bigram
        self.bos_id = _INDEX[PERIOD]
        self.period_id = _INDEX[PERIOD]
        self.stop_ids = frozenset({self.period_id})

        directions = _orthonormal(gen, embed_dim, len(CLUSTER_WORDS))
        emb = torch.randn(v, embed_dim, generator=gen, dtype=torch.float64)
        emb = emb / emb.norm(dim=1, keepdim=True)
        for i, word in enumerate(MOCK_VOCAB):
            c = word_cluster(word)
            if c is not None:
                e = directions[c] + 0.25 * emb[i]
                emb[i] = e / e.norm()
        self.embeddings = emb

    def encode(self, text: str) -> list[int]:
        words = tokenize(text)
        unknown = [w for w in words if w not in _INDEX]
        if unknown:
            raise InvalidParameterError(f"words outside the mock vocabulary: {unknown}")
        return [_INDEX[w] for w in words]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(MOCK_VOCAB[i] for i in ids).replace(f" {PERIOD}", PERIOD)

    def soft_prompt_shape(self, n_slots: int) -> tuple:
        return (self.config.n_layers, 2, n_slots, self.config.embed_dim)

    def token_embeddings(self, ids: Sequence[int]) -> torch.Tensor:
        return self.embeddings[list(ids)]

    def prefix_bias(self, prefix: PrefixContext) -> torch.Tensor:
        slots = prefix.soft.mean(dim=(0, 1))
        learned = torch.cat([slots, prefix.projected], dim=0)
        return self.bias_scale * (self.embeddings @ learned.mean(0))

    def next_token_logits(self, prefix: PrefixContext | None, tokens: Sequence[int]) -> torch.Tensor:
        last = tokens[-1] if tokens else self.bos_id
        logits = self.bigram[last]
        if prefix is not None:
            logits = logits + self.prefix_bias(prefix)
        return logits
