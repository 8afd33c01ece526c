"""Adapters for pretrained CLIP and GPT-2 checkpoints (via ``transformers``).

Only the optional reproduction path uses these; they load weights lazily and
keep every model parameter frozen.
"""
from __future__ import annotations

import logging
from typing import Sequence

import torch

from .base import LMConfig, PrefixContext, ScorerConfig, TextLike

log = logging.getLogger(__name__)


class CLIPScorer:
    def __init__(self, model, tokenizer, processor=None, model_id: str = "clip-vit-l-14",
                 temperature: float = 1.0, device: str = "cpu"):
        self.model = model.to(device).eval().requires_grad_(False)
        self.tokenizer = tokenizer
        self.processor = processor
        self.device = device
        dim = model.config.projection_dim
        scale = float(model.logit_scale.exp()) if hasattr(model, "logit_scale") else 1.0
        self.config = ScorerConfig(dim=dim, temperature=temperature, model_id=model_id, logit_scale=scale)
        self.max_length = getattr(tokenizer, "model_max_length", 77) or 77
        if self.max_length > 1000:  # tokenizers without a configured limit
            self.max_length = 77

    @classmethod
    def from_pretrained(cls, checkpoint: str, model_id: str = "clip-vit-l-14", device: str = "cpu", **kw):
        from transformers import CLIPModel, CLIPProcessor, CLIPTokenizer

        model = CLIPModel.from_pretrained(checkpoint)
        return cls(model, CLIPTokenizer.from_pretrained(checkpoint), CLIPProcessor.from_pretrained(checkpoint),
                   model_id=model_id, device=device, **kw)

    @torch.no_grad()
    def embed_texts(self, texts: Sequence[TextLike]) -> torch.Tensor:
        strings = [t if isinstance(t, str) else " ".join(t) for t in texts]
        enc = self.tokenizer(strings, padding=True, truncation=False, return_tensors="pt")
        if enc["input_ids"].shape[1] > self.max_length:
            log.warning("candidate text longer than %d tokens; truncating", self.max_length)
            enc = self.tokenizer(strings, padding=True, truncation=True, max_length=self.max_length,
                                 return_tensors="pt")
        feats = self.model.get_text_features(**{k: v.to(self.device) for k, v in enc.items()})
        feats = getattr(feats, "pooler_output", feats)
        return torch.nn.functional.normalize(feats.float(), dim=-1).cpu()

    def embed_frames(self, raw: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.normalize(raw.float(), dim=-1)

    @torch.no_grad()
    def embed_images(self, images) -> torch.Tensor:
        if self.processor is None:
            raise RuntimeError("image embedding needs a CLIP processor")
        out = []
        for i in range(0, len(images), 32):
            batch = self.processor(images=list(images[i:i + 32]), return_tensors="pt")
            feats = self.model.get_image_features(pixel_values=batch["pixel_values"].to(self.device))
            feats = getattr(feats, "pooler_output", feats)
            out.append(torch.nn.functional.normalize(feats.float(), dim=-1).cpu())
        return torch.cat(out)


class GPT2PrefixLM:
    """Frozen GPT-2 with prefix-tuning style soft prompts.

    The soft prompt supplies per-layer key/value tensors
    ``(layers, 2, heads, slots, head_dim)`` that the model attends to as if they
    were cached past positions. Projected video tokens enter as input embeddings
    ahead of the text tokens.
    """

    dtype = torch.float32

    def __init__(self, model, tokenizer, model_id: str = "gpt2-medium", device: str = "cpu",
                 stop_text: str = "."):
        self.model = model.to(device).eval().requires_grad_(False)
        self.tokenizer = tokenizer
        self.device = device
        cfg = model.config
        self.n_heads = cfg.n_head
        self.head_dim = cfg.n_embd // cfg.n_head
        self.config = LMConfig(vocab_size=cfg.vocab_size, embed_dim=cfg.n_embd, n_layers=cfg.n_layer,
                               model_id=model_id)
        self.bos_id = cfg.bos_token_id if cfg.bos_token_id is not None else 0
        self.stop_ids = frozenset(tokenizer.encode(stop_text)) | (
            {cfg.eos_token_id} if cfg.eos_token_id is not None else set())

    @classmethod
    def from_pretrained(cls, checkpoint: str, model_id: str = "gpt2-medium", device: str = "cpu"):
        from transformers import GPT2LMHeadModel, GPT2Tokenizer

        return cls(GPT2LMHeadModel.from_pretrained(checkpoint), GPT2Tokenizer.from_pretrained(checkpoint),
                   model_id=model_id, device=device)

    def encode(self, text: str) -> list[int]:
        return list(self.tokenizer.encode(text))

    def decode(self, ids: Sequence[int]) -> str:
        return self.tokenizer.decode(list(ids))

    def soft_prompt_shape(self, n_slots: int) -> tuple:
        return (self.config.n_layers, 2, self.n_heads, n_slots, self.head_dim)

    def token_embeddings(self, ids: Sequence[int]) -> torch.Tensor:
        wte = self.model.get_input_embeddings()
        return wte(torch.tensor(list(ids), dtype=torch.long, device=self.device))

    def next_token_logits(self, prefix: PrefixContext | None, tokens: Sequence[int]) -> torch.Tensor:
        from transformers import DynamicCache

        ids = list(tokens) or [self.bos_id]
        if prefix is None:
            input_ids = torch.tensor([ids], dtype=torch.long, device=self.device)
            return self.model(input_ids=input_ids).logits[0, -1]

        soft = prefix.soft.to(self.device, self.dtype)
        n_slots = soft.shape[3]
        cache = DynamicCache()
        for layer in range(soft.shape[0]):
            cache.update(soft[layer, 0].unsqueeze(0), soft[layer, 1].unsqueeze(0), layer)
        embeds = torch.cat([prefix.projected.to(self.device, self.dtype), self.token_embeddings(ids)]).unsqueeze(0)
        length = embeds.shape[1]
        mask = torch.ones(1, n_slots + length, dtype=torch.long, device=self.device)
        positions = torch.arange(length, device=self.device).unsqueeze(0)
        out = self.model(inputs_embeds=embeds, past_key_values=cache, attention_mask=mask,
                         position_ids=positions, use_cache=True)
        return out.logits[0, -1]
