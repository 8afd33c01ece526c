"""Backend interfaces and the backend-agnostic operations built on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, Union, runtime_checkable

import torch

from ..errors import InvalidParameterError, ShapeError

TextLike = Union[str, Sequence[str]]


@dataclass(frozen=True)
class ScorerConfig:
    dim: int
    temperature: float = 1.0
    model_id: str = "clip-vit-l-14"
    # multiplies cosine similarity before the temperature, as CLIP's learned logit scale does
    logit_scale: float = 1.0

    def __post_init__(self):
        if self.dim <= 0 or not self.temperature > 0 or not self.logit_scale > 0:
            raise InvalidParameterError(f"bad scorer config {self}")


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    embed_dim: int
    n_layers: int = 1
    model_id: str = "gpt2-medium"

    def __post_init__(self):
        if self.vocab_size < 2 or self.embed_dim < 1 or self.n_layers < 1:
            raise InvalidParameterError(f"bad language model config {self}")


@dataclass
class PrefixContext:
    """Conditioning prefix for one caption stream.

    ``soft`` holds the per-layer key/value prompt slots with shape
    ``(layers, 2, ..., slots, width)``; ``projected`` the projected video tokens
    ``(n_projected, embed_dim)``. ``hard_prompt`` is the token ids of the hard
    prompt. Callers pass the hard prompt to the model as the leading text
    tokens (it is plain text, not a trainable part), so the order the model
    sees is soft slots, projected tokens, hard prompt, generated text.
    """

    soft: torch.Tensor
    projected: torch.Tensor
    hard_prompt: list[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.soft.shape[-2] + self.projected.shape[0] + len(self.hard_prompt)


@runtime_checkable
class Scorer(Protocol):
    config: ScorerConfig

    def embed_texts(self, texts: Sequence[TextLike]) -> torch.Tensor: ...

    def embed_frames(self, raw: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class LanguageModel(Protocol):
    config: LMConfig
    stop_ids: frozenset

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...

    def soft_prompt_shape(self, n_slots: int) -> tuple: ...

    def token_embeddings(self, ids: Sequence[int]) -> torch.Tensor: ...

    def next_token_logits(self, prefix: PrefixContext | None, tokens: Sequence[int]) -> torch.Tensor: ...


def embed_text(scorer: Scorer, tokens: TextLike) -> torch.Tensor:
    if isinstance(tokens, str):
        empty = not tokens.strip()
    else:
        empty = len(tokens) == 0
    if empty:
        raise InvalidParameterError("cannot embed an empty token sequence")
    return scorer.embed_texts([tokens])[0]


def embed_frames(scorer: Scorer, raw) -> torch.Tensor:
    raw = torch.as_tensor(raw)
    if raw.dim() != 2 or raw.shape[1] != scorer.config.dim:
        raise ShapeError(f"expected L x {scorer.config.dim} frame features, got {tuple(raw.shape)}")
    return scorer.embed_frames(raw)


def _check_tokens(lm: LanguageModel, tokens: Sequence[int]):
    v = lm.config.vocab_size
    for t in tokens:
        if not 0 <= int(t) < v:
            raise InvalidParameterError(f"token id {t} outside vocabulary of size {v}")


def next_token_distribution(lm: LanguageModel, prefix: PrefixContext | None, tokens: Sequence[int]) -> torch.Tensor:
    _check_tokens(lm, tokens)
    return torch.softmax(lm.next_token_logits(prefix, list(tokens)), dim=-1)


def next_token_log_distribution(lm: LanguageModel, prefix: PrefixContext | None, tokens: Sequence[int]) -> torch.Tensor:
    _check_tokens(lm, tokens)
    return torch.log_softmax(lm.next_token_logits(prefix, list(tokens)), dim=-1)


def top_k_candidates(dist, k: int) -> list[int]:
    """Ids of the ``k`` most probable tokens, ties broken by ascending id."""
    probs = torch.as_tensor(dist).detach().to(torch.float64).reshape(-1)
    v = probs.shape[0]
    if not 1 <= k <= v:
        raise InvalidParameterError(f"k={k} outside [1, {v}]")
    # stable sort on descending probability keeps ascending ids among ties
    order = torch.sort(-probs, stable=True).indices
    return order[:k].tolist()
