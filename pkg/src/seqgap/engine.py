"""Monte Carlo experiment engine.

Every trial owns a counter-based generator keyed by (master seed, trial
index), so trial i's sample path is a pure function of the configuration —
independent of execution order, batching, and worker count.  Aggregation
uses compensated summation in trial order.  Reports are therefore
bit-identical across reruns and worker counts; only ``wall_time``, a
physical measurement, varies, and it is excluded from ``payload()``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .metrics import (
    MetricEstimate,
    MetricKind,
    ConfusionCounts,
    aggregate,
    bound_constants,
    confusion,
    mean_se,
)
from .models import GAUSSIAN_MEAN, StreamModel, StreamProfile, eta
from .rules import (
    STOP_FIXED,
    STOP_HORIZON,
    BhRule,
    Decision,
    GapIntersectionRule,
    GapRule,
    IntersectionRule,
    Rule,
    TopMRule,
    bh_decide,
    run_sequential,
    top_m_decide,
)
from .thresholds import ErrorBudget, gap_threshold, gi_thresholds, kappa_gap, kappa_gi

DEFAULT_HORIZON = 1_000_000
_SEED_SPAN = 2**64


def _check_seed(master_seed: int) -> int:
    if not 0 <= int(master_seed) < _SEED_SPAN:
        raise ValueError(f"master_seed must be a 64-bit integer, got {master_seed!r}")
    return int(master_seed)


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based generator for one trial.

    The 128-bit key is master_seed in the high word and the trial index in
    the low word, so distinct trials of one experiment — and trials of
    experiments with distinct master seeds — never share a stream.
    """
    master_seed = _check_seed(master_seed)
    if not 0 <= int(trial_index) < _SEED_SPAN:
        raise ValueError(f"trial_index must be a 64-bit integer, got {trial_index!r}")
    return np.random.Generator(
        np.random.Philox(key=(master_seed << 64) + int(trial_index))
    )


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministically derive an unrelated 64-bit seed for a sub-run."""
    ss = np.random.SeedSequence(
        entropy=_check_seed(master_seed), spawn_key=tuple(int(p) for p in path)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's results.

    Worker count is deliberately not part of the configuration: it only
    schedules the work and must not affect any reported number.
    """

    profile: StreamProfile
    truth: frozenset[int]
    rule: Rule
    replications: int
    master_seed: int
    horizon: int = DEFAULT_HORIZON
    metrics: tuple[MetricKind, ...] = (MetricKind.FDR, MetricKind.FNR)

    def __post_init__(self) -> None:
        object.__setattr__(self, "truth", self.profile.validate_signal_set(self.truth))
        object.__setattr__(
            self, "metrics", tuple(MetricKind(k) for k in self.metrics)
        )
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        _check_seed(self.master_seed)
        self._check_rule()

    def _check_rule(self) -> None:
        rule, j = self.rule, self.profile.j
        if isinstance(rule, GapRule):
            if rule.num_signals > j - 1:
                raise ValueError(
                    f"gap rule num_signals must be <= J - 1 = {j - 1}, "
                    f"got {rule.num_signals}"
                )
        elif isinstance(rule, GapIntersectionRule):
            if rule.max_signals > j:
                raise ValueError(
                    f"max_signals must be <= J = {j}, got {rule.max_signals}"
                )
            if MetricKind.PFDR in self.metrics and rule.min_signals == 0:
                raise ValueError(
                    "pfdr under the bracketed rule needs min_signals >= 1: with "
                    "min_signals = 0 the rule can reject nothing, so the "
                    "conditioning event can fail"
                )
            if MetricKind.PFNR in self.metrics and rule.max_signals == j:
                raise ValueError(
                    "pfnr under the bracketed rule needs max_signals <= J - 1: "
                    "with max_signals = J the rule can reject everything, so "
                    "the conditioning event can fail"
                )
        elif isinstance(rule, IntersectionRule):
            for kind in (MetricKind.PFDR, MetricKind.PFNR):
                if kind in self.metrics:
                    raise ValueError(
                        f"{kind.value} is not a valid metric for the intersection "
                        "rule: its conditioning event can fail"
                    )
        elif isinstance(rule, (BhRule, TopMRule)):
            for model in self.profile.models:
                if model.family != GAUSSIAN_MEAN:
                    raise ValueError(
                        "fixed-sample rules need p-values, which are only "
                        f"available for the {GAUSSIAN_MEAN} family; stream "
                        f"family {model.family!r} is not supported"
                    )
            if isinstance(rule, TopMRule) and rule.num_signals > j - 1:
                raise ValueError(
                    f"top-m rule num_signals must be <= J - 1 = {j - 1}, "
                    f"got {rule.num_signals}"
                )
        else:
            raise TypeError(f"unsupported rule type {type(self.rule).__name__}")
        if MetricKind.FPR in self.metrics and not self.truth:
            raise ValueError("fpr needs a nonempty signal set as its divisor")


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one trial."""

    trial_index: int
    stopping_time: int
    counts: ConfusionCounts
    stopped_by: str

    @property
    def horizon_hit(self) -> bool:
        return self.stopped_by == STOP_HORIZON


def fixed_sample_pvalues(
    profile: StreamProfile, totals: np.ndarray, n: int
) -> np.ndarray:
    """Vectorized one-sided p-values for all streams' observation sums."""
    null = np.array([m.null for m in profile.models])
    sign = np.array([1.0 if m.alt > m.null else -1.0 for m in profile.models])
    z = (np.asarray(totals, dtype=float) - n * null) / math.sqrt(n)
    return ndtr(-sign * z)


def _run_fixed(
    rule: BhRule | TopMRule,
    profile: StreamProfile,
    truth: frozenset[int],
    rng: np.random.Generator,
) -> Decision:
    n = rule.sample_size
    x = profile.sample_block(truth, n, rng)
    pvalues = fixed_sample_pvalues(profile, x.sum(axis=0), n)
    if isinstance(rule, BhRule):
        rejected = bh_decide(pvalues, rule.level)
    else:
        rejected = top_m_decide(pvalues, rule.num_signals)
    return Decision(stopping_time=n, rejected=rejected, stopped_by=STOP_FIXED)


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialRecord:
    """Run one trial on its own generator substream."""
    rng = trial_rng(config.master_seed, trial_index)
    if isinstance(config.rule, (BhRule, TopMRule)):
        decision = _run_fixed(config.rule, config.profile, config.truth, rng)
    else:
        decision = run_sequential(
            config.rule, config.profile, config.truth, config.horizon, rng
        )
    return TrialRecord(
        trial_index=trial_index,
        stopping_time=decision.stopping_time,
        counts=confusion(decision, config.truth, config.profile.j),
        stopped_by=decision.stopped_by,
    )


def _run_range(config: ExperimentConfig, start: int, stop: int) -> list[TrialRecord]:
    return [run_trial(config, i) for i in range(start, stop)]


def _run_all(config: ExperimentConfig, workers: int) -> list[TrialRecord]:
    n = config.replications
    if workers <= 1:
        return _run_range(config, 0, n)
    # Contiguous index ranges, gathered in submission order, keep the
    # records in ascending trial order without a sort.
    chunks = min(n, workers * 4)
    bounds = [round(k * n / chunks) for k in range(chunks + 1)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_range, config, lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        records: list[TrialRecord] = []
        for future in futures:
            records.extend(future.result())
    return records


@dataclass(frozen=True)
class ExperimentReport:
    """Results of one experiment.

    ``payload()`` returns the deterministic content (everything except
    ``wall_time``) as plain dictionaries; two runs of the same
    configuration must produce equal payloads regardless of worker count.
    """

    config: ExperimentConfig
    mean_stopping_time: MetricEstimate
    metrics: dict[MetricKind, MetricEstimate]
    horizon_hits: int
    wall_time: float

    def payload(self) -> dict:
        return {
            "config": config_to_dict(self.config),
            "mean_stopping_time": _estimate_to_dict(self.mean_stopping_time),
            "metrics": {
                kind.value: _estimate_to_dict(est)
                for kind, est in self.metrics.items()
            },
            "horizon_hits": self.horizon_hits,
        }


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run all trials and aggregate in trial order."""
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    started = time.perf_counter()
    records = _run_all(config, workers)
    counts = [r.counts for r in records]
    signal_count = len(config.truth) if config.truth else None
    estimates = {
        kind: aggregate(kind, counts, signal_count=signal_count)
        for kind in config.metrics
    }
    return ExperimentReport(
        config=config,
        mean_stopping_time=mean_se([float(r.stopping_time) for r in records]),
        metrics=estimates,
        horizon_hits=sum(r.horizon_hit for r in records),
        wall_time=time.perf_counter() - started,
    )


# --- serialization helpers (shared by payload() and the CLI writers) ---


def _estimate_to_dict(est: MetricEstimate) -> dict:
    return {"value": est.value, "se": est.se, "n_effective": est.n_effective}


def rule_to_dict(rule: Rule) -> dict:
    if isinstance(rule, GapRule):
        return {
            "type": "gap",
            "num_signals": rule.num_signals,
            "threshold": rule.threshold,
        }
    if isinstance(rule, GapIntersectionRule):
        return {
            "type": "gap-intersection",
            "min_signals": rule.min_signals,
            "max_signals": rule.max_signals,
            "accept_barrier": rule.accept_barrier,
            "reject_barrier": rule.reject_barrier,
            "accept_gap": rule.accept_gap,
            "reject_gap": rule.reject_gap,
        }
    if isinstance(rule, IntersectionRule):
        return {
            "type": "intersection",
            "accept_barrier": rule.accept_barrier,
            "reject_barrier": rule.reject_barrier,
        }
    if isinstance(rule, BhRule):
        return {"type": "bh", "sample_size": rule.sample_size, "level": rule.level}
    if isinstance(rule, TopMRule):
        return {
            "type": "top-m",
            "sample_size": rule.sample_size,
            "num_signals": rule.num_signals,
        }
    raise TypeError(f"unsupported rule type {type(rule).__name__}")


def profile_to_dict(profile: StreamProfile) -> dict:
    first = profile.models[0]
    if all(model == first for model in profile.models):
        return {
            "family": first.family,
            "null": first.null,
            "alt": first.alt,
            "count": profile.j,
        }
    return {
        "streams": [
            {"family": m.family, "null": m.null, "alt": m.alt}
            for m in profile.models
        ]
    }


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "streams": profile_to_dict(config.profile),
        "truth": sorted(config.truth),
        "rule": rule_to_dict(config.rule),
        "replications": config.replications,
        "master_seed": config.master_seed,
        "horizon": config.horizon,
        "metrics": [kind.value for kind in config.metrics],
    }


# --- asymptotic sweep diagnostic ---


@dataclass(frozen=True)
class SweepRow:
    """One budget point of the optimality diagnostic."""

    alpha: float
    beta: float
    rule: Rule
    mean_stopping_time: MetricEstimate
    kappa: float
    ratio: float
    horizon_hits: int


@dataclass(frozen=True)
class SweepReport:
    base: ExperimentConfig
    control: MetricKind
    rows: tuple[SweepRow, ...]

    def payload(self) -> dict:
        return {
            "base": config_to_dict(self.base),
            "control": self.control.value,
            "rows": [
                {
                    "alpha": row.alpha,
                    "beta": row.beta,
                    "rule": rule_to_dict(row.rule),
                    "mean_stopping_time": _estimate_to_dict(row.mean_stopping_time),
                    "kappa": row.kappa,
                    "ratio": row.ratio,
                    "horizon_hits": row.horizon_hits,
                }
                for row in self.rows
            ],
        }


def _rule_at_budget(
    config: ExperimentConfig, budget: ErrorBudget, control: MetricKind
) -> Rule:
    rule, j = config.rule, config.profile.j
    if isinstance(rule, GapRule):
        c1 = bound_constants(
            control, "gap", j, num_signals=rule.num_signals
        ).c1
        return replace(
            rule, threshold=gap_threshold(budget, rule.num_signals, j, c1)
        )
    if isinstance(rule, GapIntersectionRule):
        c1 = bound_constants(
            control,
            "gap-intersection",
            j,
            num_signals=len(config.truth) or None,
            min_signals=rule.min_signals,
            max_signals=rule.max_signals,
        ).c1
        th = gi_thresholds(budget, j, rule.min_signals, rule.max_signals, c1)
        return GapIntersectionRule(
            min_signals=rule.min_signals,
            max_signals=rule.max_signals,
            accept_barrier=th.accept_barrier,
            reject_barrier=th.reject_barrier,
            accept_gap=th.accept_gap,
            reject_gap=th.reject_gap,
        )
    if isinstance(rule, IntersectionRule):
        c1 = bound_constants(
            control,
            "gap-intersection",
            j,
            num_signals=len(config.truth) or None,
            min_signals=0,
            max_signals=j,
        ).c1
        th = gi_thresholds(budget, j, 0, j, c1)
        return IntersectionRule(
            accept_barrier=th.accept_barrier, reject_barrier=th.reject_barrier
        )
    raise ValueError(
        "the sweep needs a sequential rule with formula thresholds; got "
        f"{type(rule).__name__}"
    )


def _kappa(config: ExperimentConfig, budget: ErrorBudget) -> float:
    info = eta(config.profile, config.truth)
    rule = config.rule
    if isinstance(rule, GapRule):
        return kappa_gap(budget, info.eta0, info.eta1)
    if isinstance(rule, GapIntersectionRule):
        lo, hi = rule.min_signals, rule.max_signals
    else:
        lo, hi = 0, config.profile.j
    return kappa_gi(budget, info.eta0, info.eta1, len(config.truth), lo, hi)


def asymptotic_sweep(
    base: ExperimentConfig,
    budgets: list[ErrorBudget],
    workers: int = 1,
    control: MetricKind = MetricKind.FDR,
) -> SweepReport:
    """Expected stopping time against its first-order benchmark.

    Each budget point reruns the base experiment at that budget's formula
    thresholds with the same master seed (common random numbers across
    points, which sharpens the comparison), and reports the ratio of the
    estimated expected stopping time to the benchmark.  The ratio should
    decrease toward 1 as the budget shrinks.
    """
    if not budgets:
        raise ValueError("need at least one budget point")
    rows = []
    for budget in budgets:
        config = replace(base, rule=_rule_at_budget(base, budget, control))
        report = run_experiment(config, workers=workers)
        kappa = _kappa(config, budget)
        rows.append(
            SweepRow(
                alpha=budget.alpha,
                beta=budget.beta,
                rule=config.rule,
                mean_stopping_time=report.mean_stopping_time,
                kappa=kappa,
                ratio=report.mean_stopping_time.value / kappa,
                horizon_hits=report.horizon_hits,
            )
        )
    return SweepReport(base=base, control=control, rows=tuple(rows))


# --- bundled benchmark studies ---


@dataclass(frozen=True)
class BenchmarkSpec:
    """Parameters of one bundled benchmark study.

    Homogeneous gaussian-mean streams; per signal count the study fixes the
    gap-rule threshold and the two baselines' sample sizes (chosen so the
    baselines' achieved error rates line up with the gap rule's at the same
    nominal level).
    """

    j: int
    model: StreamModel
    level: float
    rows: dict[int, tuple[float, int, int]]  # m -> (threshold, bh n, top-m n)


BENCHMARKS: dict[str, BenchmarkSpec] = {
    "table1": BenchmarkSpec(
        j=10,
        model=StreamModel(GAUSSIAN_MEAN, null=0.0, alt=0.5),
        level=0.05,
        rows={
            1: (3.5, 70, 50),
            2: (2.9, 60, 46),
            3: (2.6, 59, 45),
            4: (2.3, 54, 40),
            5: (2.1, 52, 37),
            6: (2.3, 54, 40),
            7: (2.5, 56, 43),
            8: (2.8, 60, 45),
            9: (3.4, 65, 50),
        },
    ),
    "table2": BenchmarkSpec(
        j=100,
        model=StreamModel(GAUSSIAN_MEAN, null=0.0, alt=0.5),
        level=0.05,
        rows={
            1: (3.9, 90, 77),
            10: (1.9, 70, 68),
            20: (1.3, 65, 62),
            30: (1.0, 60, 57),
            40: (0.8, 56, 50),
            50: (0.7, 53, 47),
            60: (0.8, 56, 50),
            70: (1.0, 60, 57),
            80: (1.3, 64, 63),
            90: (1.9, 72, 71),
            99: (3.9, 90, 79),
        },
    ),
}


@dataclass(frozen=True)
class BenchmarkRow:
    """One signal-count row of a benchmark study.

    Savings are 1 - ET / n against each baseline's sample size.
    """

    num_signals: int
    threshold: float
    gap_et: MetricEstimate
    gap_fdr: MetricEstimate
    gap_fnr: MetricEstimate
    bh_sample_size: int
    bh_savings: float
    bh_fdr: MetricEstimate
    bh_fnr: MetricEstimate
    topm_sample_size: int
    topm_savings: float
    topm_fdr: MetricEstimate
    topm_fnr: MetricEstimate


@dataclass(frozen=True)
class BenchmarkReport:
    which: str
    j: int
    replications: int
    master_seed: int
    rows: tuple[BenchmarkRow, ...]

    def payload(self) -> dict:
        return {
            "which": self.which,
            "j": self.j,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "rows": [
                {
                    "num_signals": row.num_signals,
                    "threshold": row.threshold,
                    "gap_et": _estimate_to_dict(row.gap_et),
                    "gap_fdr": _estimate_to_dict(row.gap_fdr),
                    "gap_fnr": _estimate_to_dict(row.gap_fnr),
                    "bh_sample_size": row.bh_sample_size,
                    "bh_savings": row.bh_savings,
                    "bh_fdr": _estimate_to_dict(row.bh_fdr),
                    "bh_fnr": _estimate_to_dict(row.bh_fnr),
                    "topm_sample_size": row.topm_sample_size,
                    "topm_savings": row.topm_savings,
                    "topm_fdr": _estimate_to_dict(row.topm_fdr),
                    "topm_fnr": _estimate_to_dict(row.topm_fnr),
                }
                for row in self.rows
            ],
        }


def reproduce_table(
    which: str,
    rows: list[int] | None = None,
    replications: int = 10_000,
    master_seed: int = 20_260_816,
    workers: int = 1,
    horizon: int = DEFAULT_HORIZON,
) -> BenchmarkReport:
    """Rerun a bundled benchmark study.

    ``rows`` selects signal counts (default: all rows of the study; an
    explicitly empty list yields a header-only report).  Each row runs the
    gap rule plus both fixed-sample baselines on seeds derived from the
    master seed and the row's parameters.
    """
    if which not in BENCHMARKS:
        raise ValueError(
            f"unknown benchmark {which!r}; expected one of {sorted(BENCHMARKS)}"
        )
    spec = BENCHMARKS[which]
    selected = list(spec.rows) if rows is None else [int(m) for m in rows]
    bad = [m for m in selected if m not in spec.rows]
    if bad:
        raise ValueError(
            f"benchmark {which} has no rows {sorted(bad)}; "
            f"available: {sorted(spec.rows)}"
        )
    profile = StreamProfile.homogeneous(spec.model, spec.j)
    out = []
    for m in selected:
        threshold, bh_n, topm_n = spec.rows[m]
        truth = frozenset(range(1, m + 1))
        runs = {}
        for sub, rule in enumerate(
            (
                GapRule(num_signals=m, threshold=threshold),
                BhRule(sample_size=bh_n, level=spec.level),
                TopMRule(sample_size=topm_n, num_signals=m),
            )
        ):
            config = ExperimentConfig(
                profile=profile,
                truth=truth,
                rule=rule,
                replications=replications,
                master_seed=derive_seed(master_seed, m, sub),
                horizon=horizon,
                metrics=(MetricKind.FDR, MetricKind.FNR),
            )
            runs[sub] = run_experiment(config, workers=workers)
        gap_et = runs[0].mean_stopping_time.value
        out.append(
            BenchmarkRow(
                num_signals=m,
                threshold=threshold,
                gap_et=runs[0].mean_stopping_time,
                gap_fdr=runs[0].metrics[MetricKind.FDR],
                gap_fnr=runs[0].metrics[MetricKind.FNR],
                bh_sample_size=bh_n,
                bh_savings=1.0 - gap_et / bh_n,
                bh_fdr=runs[1].metrics[MetricKind.FDR],
                bh_fnr=runs[1].metrics[MetricKind.FNR],
                topm_sample_size=topm_n,
                topm_savings=1.0 - gap_et / topm_n,
                topm_fdr=runs[2].metrics[MetricKind.FDR],
                topm_fnr=runs[2].metrics[MetricKind.FNR],
            )
        )
    return BenchmarkReport(
        which=which,
        j=spec.j,
        replications=replications,
        master_seed=master_seed,
        rows=tuple(out),
    )
