"""Empirical threshold calibration by Monte Carlo search.

Searches run over a fixed grid (a step grid for the gap threshold, unit
integers for sample sizes): bracket the feasible region by doubling, then
bisect down to the smallest feasible grid point.  Every probe reruns the
experiment with a common master seed, so probes share their sample paths
and the feasibility boundary is not blurred by probe-to-probe noise.  The
reported achieved estimates come from a fresh evaluation seed, because the
estimates that guided the search are biased at the selected point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import ExperimentConfig, derive_seed, run_experiment
from .metrics import MetricEstimate, MetricKind
from .models import StreamProfile
from .rules import BhRule, GapRule, TopMRule
from .thresholds import ErrorBudget

_EVALUATION_TAG = 1


class CalibrationError(ValueError):
    """The search ran out of grid; carries the probe trace for reporting."""

    def __init__(self, message: str, probes=()):
        super().__init__(message)
        self.probes: tuple[CalibrationProbe, ...] = tuple(probes)


@dataclass(frozen=True)
class CalibrationProbe:
    """One probed grid point and the estimates that judged it."""

    point: float
    estimates: dict[MetricKind, MetricEstimate]


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of a calibration search.

    ``chosen`` is the selected grid point (a threshold or a sample size);
    ``achieved`` holds its estimates under the fresh evaluation seed.
    ``probes`` records every grid point visited, in probe order.
    """

    chosen: float | int
    achieved: dict[MetricKind, MetricEstimate]
    replications: int
    grid: str
    search_seed: int
    evaluation_seed: int
    probes: tuple[CalibrationProbe, ...]


def _bracket_min_feasible(
    feasible, cap_index: int, describe: str, full_scan: bool
) -> int:
    """Smallest grid index (from 1) where ``feasible`` holds.

    Doubling bracket followed by bisection; ``full_scan`` forces the
    exhaustive left-to-right scan instead (for verification, or when the
    feasible set is suspected of being non-monotone).
    """
    if cap_index < 1:
        raise ValueError(f"search cap leaves no grid points for {describe}")
    if full_scan:
        for i in range(1, cap_index + 1):
            if feasible(i):
                return i
        raise ValueError(f"no feasible point up to the cap for {describe}")
    lo, i = 0, 1
    while not feasible(i):
        if i >= cap_index:
            raise ValueError(f"no feasible point up to the cap for {describe}")
        lo, i = i, min(2 * i, cap_index)
    hi = i
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _probe_runner(make_config, seed: int, workers: int, point_of):
    """Memoized experiment runner over grid indices, recording probe order."""
    cache: dict[int, dict[MetricKind, MetricEstimate]] = {}
    order: list[int] = []

    def estimates_at(index: int) -> dict[MetricKind, MetricEstimate]:
        if index not in cache:
            report = run_experiment(make_config(index, seed), workers=workers)
            cache[index] = report.metrics
            order.append(index)
        return cache[index]

    def probes() -> tuple[CalibrationProbe, ...]:
        return tuple(
            CalibrationProbe(point=point_of(i), estimates=cache[i]) for i in order
        )

    return estimates_at, probes


def _search(feasible, cap_index: int, grid: str, full_scan: bool, probes) -> int:
    try:
        return _bracket_min_feasible(feasible, cap_index, grid, full_scan)
    except ValueError as exc:
        raise CalibrationError(str(exc), probes=probes()) from exc


def _finish(
    make_config,
    chosen_index: int,
    chosen_point: float | int,
    seed: int,
    workers: int,
    replications: int,
    grid: str,
    probes,
) -> CalibrationResult:
    evaluation_seed = derive_seed(seed, _EVALUATION_TAG)
    achieved = run_experiment(
        make_config(chosen_index, evaluation_seed), workers=workers
    ).metrics
    return CalibrationResult(
        chosen=chosen_point,
        achieved=achieved,
        replications=replications,
        grid=grid,
        search_seed=seed,
        evaluation_seed=evaluation_seed,
        probes=probes(),
    )


def calibrate_gap_c(
    profile: StreamProfile,
    truth: frozenset[int],
    num_signals: int,
    budget: ErrorBudget,
    replications: int = 10_000,
    seed: int = 0,
    grid_step: float = 0.1,
    threshold_cap: float = 50.0,
    horizon: int | None = None,
    workers: int = 1,
    full_scan: bool = False,
) -> CalibrationResult:
    """Smallest grid threshold with estimated FDR <= alpha and FNR <= beta."""
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    kwargs = {} if horizon is None else {"horizon": horizon}

    def point(index: int) -> float:
        # Round away binary float noise so reported grid points are clean.
        return round(index * grid_step, 12)

    def make_config(index: int, master_seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            profile=profile,
            truth=truth,
            rule=GapRule(num_signals=num_signals, threshold=point(index)),
            replications=replications,
            master_seed=master_seed,
            metrics=(MetricKind.FDR, MetricKind.FNR),
            **kwargs,
        )

    estimates_at, probes = _probe_runner(make_config, seed, workers, point)

    def feasible(index: int) -> bool:
        est = estimates_at(index)
        return (
            est[MetricKind.FDR].value <= budget.alpha
            and est[MetricKind.FNR].value <= budget.beta
        )

    cap_index = int(threshold_cap / grid_step + 1e-9)
    grid = f"thresholds {grid_step:g}, {2 * grid_step:g}, ... capped at {threshold_cap:g}"
    chosen = _search(feasible, cap_index, grid, full_scan, probes)
    return _finish(
        make_config,
        chosen,
        point(chosen),
        seed,
        workers,
        replications,
        grid,
        probes,
    )


def calibrate_topm_n(
    profile: StreamProfile,
    truth: frozenset[int],
    num_signals: int,
    budget: ErrorBudget,
    replications: int = 10_000,
    seed: int = 0,
    sample_size_cap: int = 10_000,
    workers: int = 1,
    full_scan: bool = False,
) -> CalibrationResult:
    """Smallest sample size whose top-m decision meets both budget sides."""

    def make_config(index: int, master_seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            profile=profile,
            truth=truth,
            rule=TopMRule(sample_size=index, num_signals=num_signals),
            replications=replications,
            master_seed=master_seed,
            metrics=(MetricKind.FDR, MetricKind.FNR),
        )

    estimates_at, probes = _probe_runner(make_config, seed, workers, float)

    def feasible(index: int) -> bool:
        est = estimates_at(index)
        return (
            est[MetricKind.FDR].value <= budget.alpha
            and est[MetricKind.FNR].value <= budget.beta
        )

    grid = f"sample sizes 1..{sample_size_cap}"
    chosen = _search(feasible, sample_size_cap, grid, full_scan, probes)
    return _finish(
        make_config, chosen, chosen, seed, workers, replications, grid, probes
    )


def calibrate_bh_n(
    profile: StreamProfile,
    truth: frozenset[int],
    level: float,
    target_fnr: float,
    replications: int = 10_000,
    seed: int = 0,
    sample_size_cap: int = 10_000,
    workers: int = 1,
) -> CalibrationResult:
    """Sample size whose step-up FNR estimate is closest to a target.

    The estimated FNR decreases in the sample size, so the minimizer of
    |FNR - target| sits at the first size meeting the target or just below
    it; both are probed and ties go to the smaller size.
    """
    if not 0 < target_fnr < 1:
        raise ValueError(f"target_fnr must be in (0, 1), got {target_fnr}")

    def make_config(index: int, master_seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            profile=profile,
            truth=truth,
            rule=BhRule(sample_size=index, level=level),
            replications=replications,
            master_seed=master_seed,
            metrics=(MetricKind.FDR, MetricKind.FNR),
        )

    estimates_at, probes = _probe_runner(make_config, seed, workers, float)

    def fnr_at(index: int) -> float:
        return estimates_at(index)[MetricKind.FNR].value

    grid = f"sample sizes 1..{sample_size_cap}"
    crossing = _search(
        lambda i: fnr_at(i) <= target_fnr, sample_size_cap, grid, False, probes
    )
    candidates = [c for c in (crossing - 1, crossing) if c >= 1]
    chosen = min(candidates, key=lambda c: (abs(fnr_at(c) - target_fnr), c))
    return _finish(
        make_config, chosen, chosen, seed, workers, replications, grid, probes
    )
