from .base import (
    LanguageModel,
    LMConfig,
    PrefixContext,
    Scorer,
    ScorerConfig,
    embed_frames,
    embed_text,
    next_token_distribution,
    next_token_log_distribution,
    top_k_candidates,
)
from .mock import MockLM, MockScorer
