import logging
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from zsdvc.backends import MockLM, PrefixContext, ScorerConfig, next_token_distribution
from zsdvc.backends.mock import CLUSTER_WORDS
from zsdvc.errors import InvalidParameterError, ShapeError, ZsdvcError
from zsdvc.generation import (
    HARD_PROMPTS,
    GenerationState,
    HardPromptPool,
    alignment_distribution,
    build_prefix,
    cross_entropy,
    generate_caption,
    language_loss,
    step_losses,
    vision_loss,
)

F64 = torch.float64


class FixedScorer:
    """Scorer whose text embeddings are looked up from a table, for exact cosine control."""

    def __init__(self, table, logit_scale=1.0, temperature=1.0):
        self.table = {k: torch.as_tensor(v, dtype=F64) for k, v in table.items()}
        dim = len(next(iter(table.values())))
        self.config = ScorerConfig(dim=dim, temperature=temperature, model_id="fixed", logit_scale=logit_scale)

    def embed_texts(self, texts):
        return torch.stack([self.table[t] for t in texts])

    def embed_frames(self, raw):
        return raw / raw.norm(dim=1, keepdim=True)


def _cosine_table(cosines):
    # unit vectors in 2-D whose first coordinate is the wanted cosine with e1
    return {f"s{i}": [c, math.sqrt(1 - c * c)] for i, c in enumerate(cosines)}


def _dist(xs):
    t = torch.tensor(xs, dtype=F64)
    return t / t.sum()


def test_hard_prompts_verbatim():
    assert HARD_PROMPTS == (
        "Video showing", "Video shows", "Video of", "Photo showing", "Photo shows", "Photo of",
        "Picture showing", "Picture shows", "Picture of", "Image showing", "Image shows", "Image of",
    )


def test_hard_prompt_pool_reproducible_and_covering():
    a = [HardPromptPool(seed=3).sample() for _ in range(1)]
    pool1, pool2 = HardPromptPool(seed=3), HardPromptPool(seed=3)
    draws = [pool1.sample() for _ in range(600)]
    assert draws == [pool2.sample() for _ in range(600)]
    assert draws[0] == a[0]
    counts = {p: draws.count(p) for p in HARD_PROMPTS}
    assert set(counts) == set(HARD_PROMPTS) and min(counts.values()) > 20
    with pytest.raises(InvalidParameterError):
        HardPromptPool(prompts=())


def test_hard_prompt_pool_state_round_trip():
    pool = HardPromptPool(seed=1)
    pool.sample()
    state = pool.getstate()
    ahead = [pool.sample() for _ in range(5)]
    pool.setstate(state)
    assert [pool.sample() for _ in range(5)] == ahead


def test_build_prefix_layout(lm):
    soft = torch.zeros(lm.soft_prompt_shape(5), dtype=F64)
    proj = torch.zeros(20 * 16, 16, dtype=F64)
    hp = lm.encode("Video of")
    prefix = build_prefix(soft, proj, torch.zeros(16, dtype=F64), hp)
    assert torch.equal(prefix.projected, torch.zeros(20, 16, dtype=F64))
    assert prefix.length == 5 + 20 + len(hp)
    with pytest.raises(ShapeError):
        build_prefix(soft, proj, torch.zeros(15, dtype=F64), hp)
    with pytest.raises(ShapeError):
        build_prefix(soft, torch.zeros(19 * 16, 16, dtype=F64), torch.zeros(16, dtype=F64), hp)
    with pytest.raises(InvalidParameterError):
        build_prefix(soft, proj, torch.full((16,), math.nan, dtype=F64), hp)


def test_pooled_vector_moves_distribution_through_projection(lm):
    gen = torch.Generator().manual_seed(0)
    soft = torch.zeros(lm.soft_prompt_shape(5), dtype=F64)
    proj = 0.1 * torch.randn(20 * 16, 16, generator=gen, dtype=F64)
    hp = lm.encode("Video of")
    u1, u2 = torch.randn(16, generator=gen, dtype=F64), torch.randn(16, generator=gen, dtype=F64)
    q1 = next_token_distribution(lm, build_prefix(soft, proj, u1, hp), hp)
    q2 = next_token_distribution(lm, build_prefix(soft, proj, u2, hp), hp)
    assert not torch.allclose(q1, q2)
    bias = lm.bias_scale * lm.embeddings @ (proj @ u1).reshape(20, 16).sum(0) / 25
    assert torch.allclose(torch.log(q1) - torch.log(q1).mean(),
                          (lm.bigram[hp[-1]] + bias) - (lm.bigram[hp[-1]] + bias).mean())


def test_alignment_examples():
    moment = torch.tensor([1.0, 0.0], dtype=F64)
    s = FixedScorer(_cosine_table([0.3, 0.1, 0.3]))
    assert alignment_distribution(["s0"], moment, s).tolist() == [1.0]
    assert torch.allclose(alignment_distribution(["s0", "s2"], moment, s), torch.tensor([0.5, 0.5], dtype=F64))
    a = alignment_distribution(["s0", "s1"], moment, s)
    assert a.tolist() == pytest.approx([0.5498, 0.4502], abs=1e-4)
    with pytest.raises(InvalidParameterError):
        alignment_distribution([], moment, s)
    with pytest.raises(InvalidParameterError):
        alignment_distribution(["s0"], moment, s, temperature=0.0)


@given(st.lists(st.floats(-0.99, 0.99), min_size=2, max_size=8), st.floats(0.05, 5), st.floats(0.05, 5))
def test_alignment_sharpens_as_temperature_drops(cosines, t1, t2):
    moment = torch.tensor([1.0, 0.0], dtype=F64)
    s = FixedScorer(_cosine_table(cosines))
    names = list(s.table)
    lo, hi = sorted((t1, t2))
    sharp, flat = alignment_distribution(names, moment, s, lo), alignment_distribution(names, moment, s, hi)
    assert float(sharp.sum()) == pytest.approx(1.0, abs=1e-12)
    assert float(sharp.max()) >= float(flat.max()) - 1e-12
    assert int(torch.argmax(torch.tensor(cosines))) in torch.nonzero(sharp == sharp.max()).flatten().tolist()


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.floats(-5, 5))
def test_softmax_alignment_ignores_constant_shift(logits, shift):
    base = torch.softmax(torch.tensor(logits, dtype=F64), 0)
    shifted = torch.softmax(torch.tensor(logits, dtype=F64) + shift, 0)
    assert torch.allclose(base, shifted, atol=1e-12)


def test_vision_loss_examples():
    a = _dist([0.2, 0.3, 0.5])
    assert float(vision_loss(a, a)) == pytest.approx(float(-(a * a.log()).sum()), abs=1e-12)
    q = _dist([0.1, 0.6, 0.3])
    assert float(vision_loss(torch.tensor([0.0, 1.0, 0.0], dtype=F64), q)) == pytest.approx(-math.log(0.6))
    v = vision_loss(torch.tensor([0.5, 0.5], dtype=F64), torch.tensor([0.9, 0.1], dtype=F64))
    assert float(v) == pytest.approx(1.2040, abs=1e-4)
    with pytest.raises(ShapeError):
        vision_loss(a, _dist([0.5, 0.5]))


positive = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=10)


@given(positive, st.data())
def test_vision_loss_at_least_entropy(xs, data):
    a = _dist(xs)
    q = _dist(data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(xs), max_size=len(xs))))
    entropy = float(-(a * a.log()).sum())
    assert float(vision_loss(a, q)) >= entropy - 1e-12
    assert float(vision_loss(a, a)) == pytest.approx(entropy, abs=1e-12)


def test_language_loss_examples():
    q = _dist([0.2, 0.3, 0.5])
    assert float(language_loss(q, q)) == pytest.approx(float(-(q * q.log()).sum()), abs=1e-12)
    ref = _dist([0.1, 0.6, 0.3])
    assert float(language_loss(torch.tensor([1.0, 0.0, 0.0], dtype=F64), ref)) == pytest.approx(-math.log(0.1))
    ll = language_loss(torch.tensor([0.7, 0.3], dtype=F64), torch.tensor([0.5, 0.5], dtype=F64))
    assert float(ll) == pytest.approx(math.log(2), abs=1e-12)


@given(positive, st.data())
def test_language_loss_drops_when_mass_moves_to_likelier_reference_token(xs, data):
    q = _dist(xs)
    ref = _dist(data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(xs), max_size=len(xs))))
    lo, hi = int(torch.argmin(ref)), int(torch.argmax(ref))
    if ref[lo] == ref[hi]:
        return
    moved = q.clone()
    delta = float(q[lo]) / 2
    moved[lo] -= delta
    moved[hi] += delta
    assert float(language_loss(moved, ref)) < float(language_loss(q, ref))


def test_language_loss_treats_reference_as_constant():
    q_logits = torch.tensor([0.1, 0.4, -0.2], dtype=F64, requires_grad=True)
    ref_logits = torch.tensor([0.3, -0.1, 0.2], dtype=F64, requires_grad=True)
    language_loss(torch.softmax(q_logits, 0), torch.softmax(ref_logits, 0)).backward()
    assert ref_logits.grad is None or float(ref_logits.grad.abs().sum()) == 0
    assert float(q_logits.grad.abs().sum()) > 0


def test_zero_probability_is_clamped_and_logged(caplog):
    with caplog.at_level(logging.WARNING, logger="zsdvc.generation"):
        v = vision_loss(torch.tensor([0.5, 0.5], dtype=F64), torch.tensor([1.0, 0.0], dtype=F64))
    assert math.isfinite(float(v))
    assert float(v) == pytest.approx(-0.5 * math.log(1e-12))
    assert "clamping" in caplog.text
    assert float(cross_entropy(_dist([1, 1]), _dist([1, 1]))) == pytest.approx(math.log(2))


# -- decoding -------------------------------------------------------------------

class PrefixParams:
    """Trainable soft prompt and projection for one caption, with a fixed moment feature."""

    def __init__(self, lm, pooled, lr=0.05):
        self.soft = torch.zeros(lm.soft_prompt_shape(5), dtype=F64, requires_grad=True)
        self.proj = torch.zeros(20 * lm.config.embed_dim, pooled.shape[0], dtype=F64, requires_grad=True)
        self.pooled = pooled
        self.hp = lm.encode("Video of")
        self.opt = torch.optim.AdamW([self.soft, self.proj], lr=lr, weight_decay=0.0018)

    def prefix_fn(self):
        return build_prefix(self.soft, self.proj, self.pooled, self.hp), self.pooled / self.pooled.norm()

    def update(self, loss, step):
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()


def _cluster_pooled(scorer, planted, cluster):
    rows = [j for j, c in enumerate(planted.labels) if c == cluster]
    return scorer.embed_frames(planted.features[rows]).mean(0)


def _greedy_bigram(lm, hp, max_tokens=20):
    out = []
    while True:
        last = (hp + out)[-1]
        tok = int(torch.argmax(lm.bigram[last]))
        out.append(tok)
        if tok in lm.stop_ids or len(out) >= max_tokens:
            return out


def test_vision_guided_caption_names_planted_cluster(scorer, lm, planted):
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 0))
    tokens = generate_caption(lm, scorer, params.hp, params.prefix_fn, params.update)
    words = lm.decode(tokens).replace(".", " ").split()
    assert 1 <= len(tokens) <= 20
    assert set(words) & set(CLUSTER_WORDS[0])


def test_generation_is_deterministic(scorer, lm, planted):
    runs = []
    for _ in range(2):
        params = PrefixParams(lm, _cluster_pooled(scorer, planted, 1))
        runs.append(generate_caption(lm, scorer, params.hp, params.prefix_fn, params.update))
    assert runs[0] == runs[1]


def test_zero_loss_weights_reduce_to_greedy_bigram(scorer, lm, planted):
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 2))
    tokens = generate_caption(lm, scorer, params.hp, params.prefix_fn, params.update,
                              vision_weight=0.0, language_weight=0.0)
    assert tokens == _greedy_bigram(lm, params.hp)
    assert float(params.soft.detach().abs().max()) == 0 and float(params.proj.detach().abs().max()) == 0


def test_language_loss_alone_still_moves_a_zero_prefix(scorer, lm, planted):
    """CE(q, q') has a nonzero gradient at q = q', so a zero prefix is not a fixed point."""
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 2))
    prefix, moment = params.prefix_fn()
    state = GenerationState(0, params.hp)
    losses = step_losses(lm, scorer, state, prefix, moment, n_candidates=64)
    losses.language.backward()
    assert float(params.proj.grad.abs().max()) > 1e-3


def test_forced_period_stops_caption(scorer, planted):
    lm = MockLM(seed=0)
    lm.bigram[:, lm.period_id] = 50.0
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 0))
    tokens = generate_caption(lm, scorer, params.hp, params.prefix_fn, params.update)
    assert tokens == [lm.period_id]


def test_caption_cap_at_max_tokens(scorer, planted):
    lm = MockLM(seed=0)
    lm.bigram[:, lm.period_id] = -50.0
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 0))
    tokens = generate_caption(lm, scorer, params.hp, params.prefix_fn, None, max_tokens=7)
    assert len(tokens) == 7 and lm.period_id not in tokens


def test_backend_failure_reports_step(scorer, lm, planted):
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 0))
    calls = {"n": 0}

    def flaky():
        calls["n"] += 1
        if calls["n"] > 4:
            raise RuntimeError("backend went away")
        return params.prefix_fn()

    with pytest.raises(ZsdvcError, match="step 2"):
        generate_caption(lm, scorer, params.hp, flaky, params.update)


def test_candidate_sentences_extend_the_caption(scorer, lm, planted):
    params = PrefixParams(lm, _cluster_pooled(scorer, planted, 0))
    prefix, moment = params.prefix_fn()
    state = GenerationState(0, params.hp, tokens=lm.encode("a red"))
    losses = step_losses(lm, scorer, state, prefix, moment, n_candidates=10)
    assert len(losses.candidates) == 10 and state.candidates == losses.candidates
    q = next_token_distribution(lm, prefix, state.context()).detach()
    assert losses.candidates == sorted(range(64), key=lambda i: (-float(q[i]), i))[:10]
