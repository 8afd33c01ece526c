"""Model identifier -> adapter + checkpoint resolution.

A registry file is TOML with one table per identifier::

    [clip-vit-l-14]
    adapter = "clip"
    checkpoint = "openai/clip-vit-large-patch14"

    [mock-lm]
    adapter = "mock-lm"
    seed = 0

Entries in a user file override the built-in table of the same name.
"""
from __future__ import annotations

from pathlib import Path

from ..errors import FormatError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

BUILTIN = {
    "mock-scorer": {"adapter": "mock-scorer", "seed": 0},
    "mock-lm": {"adapter": "mock-lm", "seed": 0},
    "clip-vit-l-14": {"adapter": "clip", "checkpoint": "openai/clip-vit-large-patch14"},
    "gpt2-medium": {"adapter": "gpt2", "checkpoint": "gpt2-medium"},
}

SCORER_ADAPTERS = {"mock-scorer", "clip"}
LM_ADAPTERS = {"mock-lm", "gpt2"}


def load_registry(path=None) -> dict[str, dict]:
    registry = {k: dict(v) for k, v in BUILTIN.items()}
    if path is None:
        return registry
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"cannot parse registry: {exc}", str(path)) from exc
    for name, entry in data.items():
        if not isinstance(entry, dict) or "adapter" not in entry:
            raise FormatError("registry entry needs an 'adapter' key", f"{path}:{name}")
        adapter = entry["adapter"]
        if adapter not in SCORER_ADAPTERS | LM_ADAPTERS:
            raise FormatError(f"unknown adapter {adapter!r}", f"{path}:{name}.adapter")
        registry[name] = dict(entry)
    return registry


def load_backend(model_id: str, kind: str, registry: dict | None = None, device: str = "cpu"):
    """Instantiate the scorer (``kind="scorer"``) or language model (``kind="lm"``) for an id."""
    registry = load_registry() if registry is None else registry
    if model_id not in registry:
        raise FormatError(f"model id {model_id!r} not in registry; known: {sorted(registry)}")
    entry = registry[model_id]
    adapter = entry["adapter"]
    allowed = SCORER_ADAPTERS if kind == "scorer" else LM_ADAPTERS
    if adapter not in allowed:
        raise FormatError(f"{model_id!r} uses adapter {adapter!r}, which is not a {kind}")
    if adapter == "mock-scorer":
        from .mock import MockScorer
        return MockScorer(seed=int(entry.get("seed", 0)), model_id=model_id)
    if adapter == "mock-lm":
        from .mock import MockLM
        return MockLM(seed=int(entry.get("seed", 0)), model_id=model_id)
    if adapter == "clip":
        from .hf import CLIPScorer
        return CLIPScorer.from_pretrained(entry["checkpoint"], model_id=model_id, device=device)
    from .hf import GPT2PrefixLM
    return GPT2PrefixLM.from_pretrained(entry["checkpoint"], model_id=model_id, device=device)
