"""Tests for benchmark evaluation, length statistics, correlation, necessity and cost."""

from __future__ import annotations

import numpy as np
import pytest

from shortcot_lab.core.env import (
    MODEL_SUM_RANGE,
    ObjectRequest,
    PromptSpec,
    benchmark_suite,
    uniform_counts,
)
from shortcot_lab.core.errors import ContractError
from shortcot_lab.core.evaluation import (
    ALL_FAVOR_COT,
    NO_DECISIVE_PAIRS,
    OVERALL,
    EvalRecord,
    EvalReport,
    NecessityRow,
    PromptStats,
    cost_from_lengths,
    cost_report,
    cot_necessity,
    evaluate,
    length_histogram,
    necessity_table,
    pearson_matrix,
    prompt_attributes,
    prompt_statistics,
    reduction_pct,
    task_score,
)
from shortcot_lab.core.policy import S_MAX, PolicyParams
from tests.helpers import small_policy


def _record(pid: str, seed: int, length: int, model_sum: float, *, use_cot: bool = True,
            category: str = "colors") -> EvalRecord:
    return EvalRecord(prompt_id=pid, category=category, seed=seed, use_cot=use_cot,
                      cot_length=length, detection=0.8, alignment=0.5, preference=0.29,
                      model_sum=model_sum, score=task_score(model_sum))


@pytest.fixture
def suite() -> list[PromptSpec]:
    return benchmark_suite(uniform_counts(2), seed=0)


@pytest.fixture
def policy() -> PolicyParams:
    return small_policy(3, scale=20.0)


class TestTaskScore:
    def test_range_endpoints(self) -> None:
        assert task_score(MODEL_SUM_RANGE[0]) == 0.0
        assert task_score(MODEL_SUM_RANGE[1]) == 1.0

    def test_clipped(self) -> None:
        assert task_score(0.5) == 0.0
        assert task_score(3.0) == 1.0

    def test_midpoint(self) -> None:
        assert task_score(1.59) == pytest.approx(0.5)


class TestEvalReport:
    def test_aggregates(self) -> None:
        report = EvalReport((
            _record("a", 1, 10, 2.12), _record("a", 2, 20, 1.06),
            _record("b", 1, 30, 1.59, category="counting"),
        ), (1, 2), True)
        assert [c.category for c in report.categories] == ["colors", "counting"]
        assert report.overall.category == OVERALL
        assert report.overall.samples == 3
        assert report.overall.prompts == 2
        assert report.overall.best_of_seeds == pytest.approx((1.0 + 0.5) / 2)
        assert report.mean_cot_length == pytest.approx(20.0)
        assert report.overall.semantic_tokens == 63
        assert report.overall.scene_tokens == 48

    def test_total_tokens(self) -> None:
        assert _record("a", 1, 10, 1.5).total_tokens == 10 + 1 + 16

    def test_empty(self) -> None:
        with pytest.raises(ContractError, match="no records"):
            EvalReport((), (1,), True)

    def test_rows_follow_columns(self) -> None:
        report = EvalReport((_record("a", 1, 10, 1.5),), (1,), True)
        assert list(report.category_rows()[0])[:3] == ["category", "prompts", "samples"]
        assert report.record_rows()[0]["prompt_id"] == "a"
        assert report.summary()["samples"] == 1


class TestEvaluate:
    def test_one_record_per_prompt_and_seed(
        self, policy: PolicyParams, suite: list[PromptSpec]
    ) -> None:
        report = evaluate(policy, suite, (1, 2, 3))
        assert len(report.records) == 3 * len(suite)
        assert report.prompt_ids == tuple(s.id for s in suite)
        assert all(0.0 <= r.score <= 1.0 for r in report.records)

    def test_deterministic_and_worker_independent(
        self, policy: PolicyParams, suite: list[PromptSpec]
    ) -> None:
        a = evaluate(policy, suite, (1, 2))
        b = evaluate(policy, suite, (1, 2), workers=3)
        assert a.records == b.records

    def test_without_cot(self, policy: PolicyParams, suite: list[PromptSpec]) -> None:
        report = evaluate(policy, suite, (1,), use_cot=False)
        assert all(r.cot_length == 0 and not r.use_cot for r in report.records)

    def test_cap(self, policy: PolicyParams, suite: list[PromptSpec]) -> None:
        report = evaluate(policy, suite, (1, 2), cap_length=3)
        assert max(r.cot_length for r in report.records) <= 3

    def test_empty_suite(self, policy: PolicyParams) -> None:
        with pytest.raises(ContractError, match="empty"):
            evaluate(policy, [], (1,))

    def test_no_seeds(self, policy: PolicyParams, suite: list[PromptSpec]) -> None:
        with pytest.raises(ContractError, match="seed"):
            evaluate(policy, suite, ())


class TestLengthHistogram:
    def test_bins_and_moments(self) -> None:
        hist = length_histogram([1, 2, 2, 3, 10])
        assert len(hist.counts) == S_MAX + 1
        assert hist.counts[2] == 2
        assert sum(hist.counts) == 5
        assert hist.mean == pytest.approx(3.6)
        assert hist.median == 2.0
        assert hist.skewness > 0

    def test_skewness_matches_moments(self) -> None:
        values = np.array([5, 7, 7, 8, 30, 31, 40], dtype=float)
        centred = values - values.mean()
        expected = (centred**3).mean() / (centred**2).mean() ** 1.5
        assert length_histogram(values.astype(int)).skewness == pytest.approx(expected)

    def test_point_mass(self) -> None:
        assert length_histogram([12, 12, 12]).skewness == 0.0

    def test_out_of_range(self) -> None:
        with pytest.raises(ContractError):
            length_histogram([S_MAX + 1])

    def test_empty(self) -> None:
        with pytest.raises(ContractError):
            length_histogram([])


class TestCorrelation:
    def _stats(self, rng: np.random.Generator, n: int = 30) -> list[PromptStats]:
        return [
            PromptStats(f"p{i}", "colors", *rng.uniform(0, 40, 2).tolist(),
                        *rng.uniform(0, 1, 2).tolist())
            for i in range(n)
        ]

    def test_matches_direct_formula(self) -> None:
        stats = self._stats(np.random.default_rng(0))
        matrix = pearson_matrix(stats)
        x = np.array([s.length_avg for s in stats])
        y = np.array([s.score_avg for s in stats])
        expected = ((x - x.mean()) * (y - y.mean())).sum() / np.sqrt(
            ((x - x.mean()) ** 2).sum() * ((y - y.mean()) ** 2).sum()
        )
        assert matrix.get("length_avg", "score_avg") == pytest.approx(expected, abs=1e-9)

    def test_symmetric_unit_diagonal(self) -> None:
        matrix = pearson_matrix(self._stats(np.random.default_rng(1)))
        np.testing.assert_allclose(matrix.values, matrix.values.T)
        np.testing.assert_allclose(np.diag(matrix.values), 1.0)
        assert np.abs(matrix.values).max() <= 1.0

    def test_constant_variable(self) -> None:
        stats = [PromptStats(f"p{i}", "colors", float(i), 0.0, i / 10, 0.0) for i in range(5)]
        matrix = pearson_matrix(stats)
        assert matrix.degenerate == ("length_std", "score_std")
        assert matrix.get("length_avg", "length_std") == 0.0
        assert matrix.get("length_avg", "score_avg") == pytest.approx(1.0)

    def test_too_few_prompts(self) -> None:
        with pytest.raises(ContractError, match="at least 3"):
            pearson_matrix(self._stats(np.random.default_rng(2), n=2))

    def test_prompt_statistics(self) -> None:
        report = EvalReport((_record("a", 1, 10, 2.12), _record("a", 2, 20, 1.06)), (1, 2), True)
        (stats,) = prompt_statistics(report)
        assert stats.length_avg == 15.0
        assert stats.length_std == 5.0
        assert stats.score_avg == 0.5

    def test_rows(self) -> None:
        rows = pearson_matrix(self._stats(np.random.default_rng(3))).rows()
        assert [r["variable"] for r in rows] == ["length_avg", "length_std", "score_avg",
                                                 "score_std"]


class TestNecessity:
    SUITE = [
        PromptSpec("a", "colors", (ObjectRequest("cup", "red"),)),
        PromptSpec("b", "two_objects", (ObjectRequest("cup"), ObjectRequest("tree"))),
    ]

    def test_ratio_markers(self) -> None:
        assert NecessityRow("x", 3, 0, 1).ratio == ALL_FAVOR_COT
        assert NecessityRow("x", 0, 0, 4).ratio == NO_DECISIVE_PAIRS
        assert NecessityRow("x", 3, 2, 0).ratio == 1.5

    def test_attributes(self) -> None:
        assert prompt_attributes(self.SUITE[0]) == ["category:colors", "colored", "kind:cup"]

    def test_seed_paired_tally(self) -> None:
        with_cot = EvalReport((
            _record("a", 1, 20, 2.0), _record("a", 2, 20, 1.5),
            _record("b", 1, 20, 1.8, category="two_objects"),
        ), (1, 2), True)
        without = EvalReport((
            _record("a", 1, 0, 1.5, use_cot=False), _record("a", 2, 0, 1.5, use_cot=False),
            _record("b", 1, 0, 1.9, use_cot=False, category="two_objects"),
        ), (1, 2), False)
        rows = {r.attribute: r for r in necessity_table(self.SUITE, with_cot, without)}
        assert (rows["category:colors"].cot_wins, rows["category:colors"].ties) == (1, 1)
        assert rows["kind:cup"].cot_wins == 1
        assert rows["kind:cup"].no_cot_wins == 1
        assert rows["kind:tree"].ratio == 0.0

    def test_arms_checked(self) -> None:
        report = EvalReport((_record("a", 1, 20, 2.0),), (1,), True)
        with pytest.raises(ContractError, match="without-CoT"):
            necessity_table(self.SUITE, report, report)

    def test_cot_necessity_covers_every_sample(self, policy: PolicyParams) -> None:
        suite = benchmark_suite(uniform_counts(2), seed=0)
        rows = cot_necessity(policy, suite, (1, 2))
        categories = [r for r in rows if r.attribute.startswith("category:")]
        assert len(categories) == 6
        assert all(r.cot_wins + r.no_cot_wins + r.ties == 4 for r in categories)

    def test_samples_must_match(self) -> None:
        with_cot = EvalReport((_record("a", 1, 20, 2.0),), (1,), True)
        without = EvalReport((_record("a", 2, 0, 2.0, use_cot=False),), (2,), False)
        with pytest.raises(ContractError, match="different samples"):
            necessity_table(self.SUITE, with_cot, without)


class TestCost:
    def test_worked_example(self) -> None:
        cost = cost_from_lengths(93.11, 41.97)
        assert cost.cot_reduction_pct == pytest.approx(54.92, abs=0.01)
        assert cost.baseline_tokens_per_image == pytest.approx(93.11 + 17)

    def test_reduction_zero_baseline(self) -> None:
        assert reduction_pct(0.0, 0.0) == 0.0
        with pytest.raises(ContractError):
            reduction_pct(0.0, 1.0)

    def test_no_change(self) -> None:
        assert cost_from_lengths(40.0, 40.0).token_reduction_pct == 0.0

    def test_from_reports(self) -> None:
        base = EvalReport((_record("a", 1, 40, 1.5), _record("a", 2, 20, 1.5)), (1, 2), True)
        short = EvalReport((_record("a", 1, 10, 1.5), _record("a", 2, 20, 1.5)), (1, 2), True)
        cost = cost_report(base, short)
        assert cost.cot_reduction_pct == pytest.approx(50.0)
        assert cost.treated_tokens_per_image == pytest.approx(15 + 17)
        assert set(cost.summary()) >= {"cot_reduction_pct", "token_reduction_pct"}

    def test_reports_must_match(self) -> None:
        a = EvalReport((_record("a", 1, 40, 1.5),), (1,), True)
        b = EvalReport((_record("b", 1, 40, 1.5),), (1,), True)
        with pytest.raises(ContractError, match="same suite"):
            cost_report(a, b)

