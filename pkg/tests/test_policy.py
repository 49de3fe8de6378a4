"""Tests for the two-phase toy policy: sampling, scoring and analytic gradients."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from shortcot_lab.core.env import SCENE_CELLS, VOCAB
from shortcot_lab.core.errors import ConfigError, ContractError, DimensionError, NumericError
from shortcot_lab.core.penalties import cot_length
from shortcot_lab.core.policy import (
    S_MAX,
    PolicyParams,
    check_vocabulary,
    context_state,
    forward_logits,
    forward_sequence,
    grad_logprob_sum,
    init_for_vocab,
    init_params,
    kl_exact,
    kl_gradient,
    log_softmax,
    logprob_sequence,
    phase_mask,
    sample_rollout,
)
from tests.helpers import directional_fd, random_sequence, relative_error, small_policy


def _with_bias(params: PolicyParams, token: int, value: float) -> PolicyParams:
    b_out = params.b_out.copy()
    b_out[token] = value
    return replace(params, b_out=b_out)


class TestInitParams:
    def test_deterministic(self) -> None:
        assert init_for_vocab(7).equals(init_for_vocab(7))
        assert not init_for_vocab(7).equals(init_for_vocab(8))

    def test_range_and_shapes(self) -> None:
        p = init_params(5, 6, 7, seed=1, embed_dim=2, hidden_dim=3)
        assert p.embeddings.shape == (18, 2)
        assert p.w_hidden.shape == (6, 3)
        assert p.w_out.shape == (3, 18)
        assert np.abs(p.flatten()).max() <= 0.05

    def test_non_positive_size(self) -> None:
        with pytest.raises(ConfigError, match="semantic"):
            init_params(5, 0, 7, seed=1)

    def test_shape_mismatch_rejected(self) -> None:
        p = init_params(2, 2, 2, seed=0, embed_dim=2, hidden_dim=2)
        with pytest.raises(DimensionError, match="b_out"):
            PolicyParams(p.embeddings, p.w_hidden, p.b_hidden, p.w_out, np.zeros(5), 2, 2, 2)

    def test_check_vocabulary(self) -> None:
        check_vocabulary(init_for_vocab(0))
        with pytest.raises(DimensionError, match="vocabulary"):
            check_vocabulary(init_params(3, 3, 3, seed=0))


class TestParamsArithmetic:
    def test_flat_round_trip(self) -> None:
        p = small_policy(3)
        assert p.with_flat(p.flatten()).equals(p)

    def test_add_sub(self) -> None:
        a, b = small_policy(1), small_policy(2)
        np.testing.assert_allclose(((a + b) - b).flatten(), a.flatten(), atol=1e-15)

    def test_wrong_flat_size(self) -> None:
        with pytest.raises(DimensionError):
            small_policy().with_flat(np.zeros(3))


class TestForward:
    def test_masked_outside_phase(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        state = context_state(params, prompt, [], "semantic")
        logits = forward_logits(params, state, "semantic")
        assert np.isneginf(logits[: params.prompt_size]).all()
        assert np.isneginf(logits[VOCAB.scene_range.start:]).all()
        assert np.isfinite(logits[VOCAB.semantic_range.start: VOCAB.semantic_range.stop]).all()

    def test_state_shape_checked(self, params: PolicyParams) -> None:
        with pytest.raises(DimensionError):
            forward_logits(params, np.zeros(3), "scene")

    def test_non_finite_state(self, params: PolicyParams) -> None:
        state = np.full(2 * params.embed_dim + 2, np.nan)
        with pytest.raises(NumericError):
            forward_logits(params, state, "scene")

    def test_unknown_phase(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        with pytest.raises(ContractError, match="phase"):
            context_state(params, prompt, [], "image")  # type: ignore[arg-type]

    def test_log_softmax_large_logits(self) -> None:
        out = log_softmax(np.array([1000.0, 1000.0, -np.inf]))
        assert out[0] == pytest.approx(np.log(0.5))
        assert np.isneginf(out[2])

    def test_batched_matches_stepwise(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 6)
        logp = logprob_sequence(params, prompt, s, t)
        tokens = [*s, *t]
        for j, token in enumerate(tokens):
            phase = "semantic" if j < len(s) else "scene"
            state = context_state(params, prompt, tokens[:j], phase)
            expected = log_softmax(forward_logits(params, state, phase))[token]
            assert logp[j] == pytest.approx(expected, abs=1e-9)

    def test_logprobs_non_positive(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(1), 4)
        assert (logprob_sequence(params, prompt, s, t) <= 0).all()


    def test_zero_params_uniform_over_phase(self, prompt: tuple[int, ...]) -> None:
        zeros = small_policy(0).zeros_like()
        for phase, span in (("semantic", VOCAB.semantic_range), ("scene", VOCAB.scene_range)):
            state = context_state(zeros, prompt, [], phase)
            probs = np.exp(log_softmax(forward_logits(zeros, state, phase)))
            inside = probs[span.start: span.stop]
            np.testing.assert_allclose(inside, 1.0 / len(span), rtol=1e-12)
            assert probs.sum() - inside.sum() == 0.0

    def test_softmax_normalised(self, params: PolicyParams) -> None:
        rng = np.random.default_rng(12)
        for i in range(100):
            phase = "semantic" if i % 2 else "scene"
            state = rng.normal(scale=3.0, size=2 * params.embed_dim + 2)
            probs = np.exp(log_softmax(forward_logits(params, state, phase)))
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs[~phase_mask(params, phase)] == 0.0).all()


class TestPhaseContract:
    def test_empty_cot(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        _, t = random_sequence(np.random.default_rng(0), 1)
        with pytest.raises(ContractError, match="empty"):
            forward_sequence(params, prompt, (), t)

    def test_short_scene(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 3)
        with pytest.raises(ContractError, match="16"):
            forward_sequence(params, prompt, s, t[:-1])

    def test_scene_token_in_semantic_phase(
        self, params: PolicyParams, prompt: tuple[int, ...]
    ) -> None:
        _, t = random_sequence(np.random.default_rng(0), 3)
        with pytest.raises(ContractError, match="semantic mask"):
            forward_sequence(params, prompt, (t[0], VOCAB.eoc_id), t)

    def test_missing_marker_on_short_cot(
        self, params: PolicyParams, prompt: tuple[int, ...]
    ) -> None:
        s, t = random_sequence(np.random.default_rng(0), 3)
        with pytest.raises(ContractError, match="S_MAX"):
            forward_sequence(params, prompt, s[:-1], t)

    def test_early_marker(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 3)
        with pytest.raises(ContractError, match="before the end"):
            forward_sequence(params, prompt, (VOCAB.eoc_id, *s), t)


class TestSampleRollout:
    def test_well_formed(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        rng = np.random.default_rng(5)
        for _ in range(10):
            r = sample_rollout(params, prompt, rng)
            assert len(r.scene_tokens) == SCENE_CELLS
            assert all(VOCAB.is_semantic(t) for t in r.semantic_tokens)
            assert all(VOCAB.is_scene(t) for t in r.scene_tokens)
            assert 1 <= len(r.semantic_tokens) <= S_MAX
            assert r.truncated == (r.semantic_tokens[-1] != VOCAB.eoc_id)
            assert r.logprob_new.shape == (r.length,)

    def test_deterministic(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        a = sample_rollout(params, prompt, np.random.default_rng(3))
        b = sample_rollout(params, prompt, np.random.default_rng(3))
        assert a.semantic_tokens == b.semantic_tokens
        assert a.scene_tokens == b.scene_tokens

    def test_logprob_matches_rescoring(
        self, params: PolicyParams, prompt: tuple[int, ...]
    ) -> None:
        r = sample_rollout(params, prompt, np.random.default_rng(4))
        rescored = logprob_sequence(params, prompt, r.semantic_tokens, r.scene_tokens)
        assert r.logprob_new.tobytes() == rescored.tobytes()

    def test_without_cot(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        r = sample_rollout(params, prompt, np.random.default_rng(0), use_cot=False)
        assert r.semantic_tokens == (VOCAB.eoc_id,)
        assert cot_length(r) == 0

    def test_cap_applied_before_scene(self, prompt: tuple[int, ...]) -> None:
        # An untrained policy rarely emits the marker, so CoTs run long.
        params = small_policy(2)
        r = sample_rollout(params, prompt, np.random.default_rng(1), cap_length=5)
        assert cot_length(r) <= 5
        assert r.semantic_tokens[-1] == VOCAB.eoc_id
        assert not r.truncated

    def test_scene_stream_shared_across_arms(self, prompt: tuple[int, ...]) -> None:
        # A policy that ignores its context: the scene depends only on the scene stream.
        base = small_policy(0)
        params = base.with_flat(np.zeros(base.size))
        with_cot = sample_rollout(params, prompt, np.random.default_rng(9))
        without = sample_rollout(params, prompt, np.random.default_rng(9), use_cot=False)
        assert with_cot.scene_tokens == without.scene_tokens



    def test_fixed_marker_logit_gives_truncated_geometric_length(
        self, prompt: tuple[int, ...]
    ) -> None:
        # Zero weights: every CoT step ends with probability p independent of context.
        p = 0.1
        others = len(VOCAB.semantic_range) - 1
        logit = np.log(others * p / (1 - p))
        params = _with_bias(small_policy(0).zeros_like(), VOCAB.eoc_id, logit)
        rng = np.random.default_rng(2024)
        lengths = [len(sample_rollout(params, prompt, rng).semantic_tokens) for _ in range(1000)]
        expected = (1 - (1 - p) ** S_MAX) / p
        assert np.mean(lengths) == pytest.approx(expected, abs=1.5)
        assert max(lengths) <= S_MAX

    def test_forced_marker_first(self, prompt: tuple[int, ...]) -> None:
        params = _with_bias(small_policy(0).zeros_like(), VOCAB.eoc_id, 50.0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            r = sample_rollout(params, prompt, rng)
            assert r.semantic_tokens == (VOCAB.eoc_id,)
            assert not r.truncated

    def test_cap_and_no_cot_keep_scene_stream(self, prompt: tuple[int, ...]) -> None:
        # Context-free but non-uniform scene logits.
        zeros = small_policy(0).zeros_like()
        b_out = np.random.default_rng(3).normal(scale=2.0, size=zeros.total_vocab)
        params = replace(zeros, b_out=b_out)
        for seed in range(10):
            base = sample_rollout(params, prompt, np.random.default_rng(seed))
            capped = sample_rollout(params, prompt, np.random.default_rng(seed), cap_length=2)
            without = sample_rollout(params, prompt, np.random.default_rng(seed), use_cot=False)
            assert capped.scene_tokens == base.scene_tokens
            assert without.scene_tokens == base.scene_tokens


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_logprob_sum_matches_finite_differences(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        params = small_policy(seed, scale=10.0)
        prompt = (0, 7, 20, 29, 32)
        s, t = random_sequence(rng, int(rng.integers(1, 6)))
        weights = rng.normal(size=len(s) + len(t))

        def objective(p: PolicyParams) -> float:
            return float(weights @ logprob_sequence(p, prompt, s, t))

        grad = grad_logprob_sum(params, prompt, s, t, weights).flatten()
        for _ in range(3):
            u = rng.normal(size=params.size)
            assert relative_error(grad @ u, directional_fd(objective, params, u)) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_kl_matches_finite_differences(self, seed: int) -> None:
        rng = np.random.default_rng(100 + seed)
        params = small_policy(seed, scale=10.0)
        ref = small_policy(seed + 50, scale=10.0)
        prompt = (1, 8, 21, 30, 33)
        s, t = random_sequence(rng, int(rng.integers(1, 6)))

        def objective(p: PolicyParams) -> float:
            return float(kl_exact(p, ref, prompt, s, t).sum())

        grad = kl_gradient(params, ref, prompt, s, t).flatten()
        for _ in range(3):
            u = rng.normal(size=params.size)
            assert relative_error(grad @ u, directional_fd(objective, params, u)) < 1e-4

    def test_kl_zero_against_itself(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 4)
        np.testing.assert_allclose(kl_exact(params, params, prompt, s, t), 0.0, atol=1e-12)
        grad = kl_gradient(params, params, prompt, s, t).flatten()
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_kl_non_negative(self, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 4)
        kl = kl_exact(small_policy(1, 20.0), small_policy(2, 20.0), prompt, s, t)
        assert (kl >= -1e-12).all()

    def test_kl_layout_mismatch(self, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 2)
        with pytest.raises(DimensionError):
            kl_exact(small_policy(), init_for_vocab(0), prompt, s, t)

    def test_weight_length_checked(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 2)
        with pytest.raises(ContractError, match="weights"):
            grad_logprob_sum(params, prompt, s, t, np.ones(3))

    def test_non_finite_weights(self, params: PolicyParams, prompt: tuple[int, ...]) -> None:
        s, t = random_sequence(np.random.default_rng(0), 2)
        weights = np.ones(len(s) + len(t))
        weights[0] = np.inf
        with pytest.raises(NumericError):
            grad_logprob_sum(params, prompt, s, t, weights)
