"""Prefix construction, per-step caption losses and the decoding loop for one moment."""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from .backends.base import (
    LanguageModel,
    PrefixContext,
    Scorer,
    next_token_log_distribution,
    top_k_candidates,
)
from .errors import InvalidParameterError, ShapeError, ZsdvcError

log = logging.getLogger(__name__)

HARD_PROMPTS = (
    "Video showing", "Video shows", "Video of",
    "Photo showing", "Photo shows", "Photo of",
    "Picture showing", "Picture shows", "Picture of",
    "Image showing", "Image shows", "Image of",
)

EPS = 1e-12
MAX_CAPTION_TOKENS = 20


class HardPromptPool:
    """Uniform, seed-reproducible choice of a hard prompt for each new sentence."""

    def __init__(self, prompts: Sequence[str] = HARD_PROMPTS, seed: int = 0):
        if not prompts:
            raise InvalidParameterError("hard prompt pool is empty")
        self.prompts = tuple(prompts)
        self._rng = random.Random(seed)

    def sample(self) -> str:
        return self._rng.choice(self.prompts)

    def getstate(self):
        return self._rng.getstate()

    def setstate(self, state):
        self._rng.setstate(state)


def build_prefix(soft: torch.Tensor, projection: torch.Tensor, pooled: torch.Tensor,
                 hard_prompt: Sequence[int], n_projected: int = 20) -> PrefixContext:
    """Assemble [soft slots] + [projection(pooled) as n_projected tokens] + [hard prompt]."""
    if pooled.dim() != 1 or projection.dim() != 2 or projection.shape[1] != pooled.shape[0]:
        raise ShapeError(
            f"projection {tuple(projection.shape)} cannot map pooled vector {tuple(pooled.shape)}"
        )
    if projection.shape[0] % n_projected:
        raise ShapeError(f"projection output {projection.shape[0]} not divisible by {n_projected}")
    if not bool(torch.isfinite(pooled).all()):
        raise InvalidParameterError("pooled moment feature is not finite")
    projected = (projection @ pooled).reshape(n_projected, -1)
    return PrefixContext(soft=soft, projected=projected, hard_prompt=list(hard_prompt))


def alignment_distribution(candidates: Sequence, moment_embedding: torch.Tensor,
                           scorer: Scorer, temperature: float | None = None) -> torch.Tensor:
    """Softmax over candidates of logit_scale * cosine(text, moment) / temperature.

    ``logit_scale`` comes from the scorer (1 unless the scorer declares one).
    """
    if len(candidates) == 0:
        raise InvalidParameterError("no candidate sentences to score")
    tau = scorer.config.temperature if temperature is None else temperature
    if not tau > 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    text = scorer.embed_texts(list(candidates)).to(moment_embedding.dtype)
    cos = (text @ moment_embedding) / (
        text.norm(dim=1).clamp_min(EPS) * moment_embedding.norm().clamp_min(EPS)
    )
    return torch.softmax(scorer.config.logit_scale * cos / tau, dim=0)


def _safe_log(p: torch.Tensor, what: str) -> torch.Tensor:
    if bool((p.detach() < EPS).any()):
        log.warning("%s has entries below %g; clamping before log", what, EPS)
    return torch.log(p.clamp_min(EPS))


def cross_entropy(target: torch.Tensor, pred: torch.Tensor, what: str = "distribution") -> torch.Tensor:
    return -(target * _safe_log(pred, what)).sum()


def vision_loss(a: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """CE(a, q) for one caption: alignment distribution against LM candidate probabilities."""
    if a.shape != q.shape:
        raise ShapeError(f"alignment {tuple(a.shape)} and candidate probs {tuple(q.shape)} differ")
    return cross_entropy(a, q, "candidate distribution")


def language_loss(q: torch.Tensor, q_ref: torch.Tensor) -> torch.Tensor:
    """CE(q, q_ref); the unprefixed reference ``q_ref`` is treated as a constant."""
    if q.shape != q_ref.shape:
        raise ShapeError(f"distributions over different vocabularies: {tuple(q.shape)} vs {tuple(q_ref.shape)}")
    return cross_entropy(q, q_ref.detach(), "reference distribution")


@dataclass
class GenerationState:
    index: int
    hard_prompt: list[int]
    tokens: list[int] = field(default_factory=list)
    done: bool = False
    candidates: list[int] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.tokens)

    def context(self) -> list[int]:
        return self.hard_prompt + self.tokens


@dataclass
class StepLosses:
    vision: torch.Tensor
    language: torch.Tensor
    candidates: list[int]


def step_losses(lm: LanguageModel, scorer: Scorer, state: GenerationState, prefix: PrefixContext,
                moment_embedding: torch.Tensor, n_candidates: int = 512,
                temperature: float | None = None) -> StepLosses:
    """Vision and language loss of one caption at its current generation step."""
    context = state.context()
    log_q = next_token_log_distribution(lm, prefix, context)
    with torch.no_grad():
        q_ref = torch.exp(next_token_log_distribution(lm, None, context))
    q = torch.exp(log_q)
    k = min(n_candidates, q.shape[0])
    candidates = top_k_candidates(q, k)
    sentences = [lm.decode(state.tokens + [t]) for t in candidates]
    a = alignment_distribution(sentences, moment_embedding, scorer, temperature)
    q_cand = q[candidates]
    q_cand = q_cand / q_cand.sum()
    state.candidates = candidates
    return StepLosses(vision_loss(a, q_cand), language_loss(q, q_ref), candidates)


@torch.no_grad()
def select_token(lm: LanguageModel, prefix: PrefixContext, state: GenerationState) -> int:
    """Argmax of the (updated) prefixed distribution over the step's candidate set."""
    log_q = next_token_log_distribution(lm, prefix, state.context())
    cand = torch.tensor(state.candidates)
    scores = log_q[cand]
    best = int(torch.argmax(scores))
    ties = (scores == scores[best]).nonzero().flatten().tolist()
    return min(state.candidates[i] for i in ties)


def advance(lm: LanguageModel, state: GenerationState, token: int, max_tokens: int = MAX_CAPTION_TOKENS):
    state.tokens.append(token)
    if token in lm.stop_ids or len(state.tokens) >= max_tokens:
        state.done = True


def generate_caption(lm: LanguageModel, scorer: Scorer, hard_prompt: Sequence[int],
                     prefix_fn: Callable[[], tuple[PrefixContext, torch.Tensor]],
                     update: Callable[[torch.Tensor, torch.Tensor], None] | None = None,
                     vision_weight: float = 1.0, language_weight: float = 0.8,
                     n_candidates: int = 512, max_tokens: int = MAX_CAPTION_TOKENS) -> list[int]:
    """Decode one caption, letting ``update`` take an optimizer step at each token.

    ``prefix_fn`` rebuilds ``(prefix, moment_embedding)`` from the current
    parameters; it is called once for the losses and once after the update to
    read out the token. ``update`` receives the weighted caption loss and the
    step index.
    """
    state = GenerationState(index=0, hard_prompt=list(hard_prompt))
    while not state.done:
        try:
            prefix, moment = prefix_fn()
            losses = step_losses(lm, scorer, state, prefix, moment, n_candidates)
            if update is not None:
                update(vision_weight * losses.vision + language_weight * losses.language, state.step)
            prefix, _ = prefix_fn()
            token = select_token(lm, prefix, state)
        except ZsdvcError:
            raise
        except Exception as exc:
            raise ZsdvcError(f"caption generation failed at step {state.step}: {exc}") from exc
        advance(lm, state, token, max_tokens)
    return state.tokens
