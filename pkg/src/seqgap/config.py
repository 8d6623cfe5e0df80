"""Experiment configuration files.

YAML documents with six sections — ``streams``, ``truth``, ``rule``,
``budget``, ``run``, ``output`` — plus an optional ``calibrate`` section
consumed by the calibrate command.  The schema is strict: unknown keys and
wrong types are rejected with the offending field named, and such problems
raise ConfigError (the CLI's configuration exit class).  Semantic errors
that only the assembled experiment can detect (rule/metric compatibility,
say) surface later from the engine as runtime errors.

Threshold values may be the string "auto", which resolves them through the
closed-form formulas at the configured budget, with the bound constant of
the rule's ``control`` metric (default fdr).
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .engine import DEFAULT_HORIZON, ExperimentConfig
from .metrics import MetricKind, bound_constants
from .models import StreamModel, StreamProfile
from .rules import BhRule, GapIntersectionRule, GapRule, IntersectionRule, Rule, TopMRule
from .thresholds import ErrorBudget, gap_threshold, gi_thresholds

FORMATS = ("csv", "json", "text")


class ConfigError(ValueError):
    """A configuration document is malformed; message names the field."""


@dataclass(frozen=True)
class CalibrationSettings:
    """Knobs for the calibrate command."""

    grid_step: float = 0.1
    threshold_cap: float = 50.0
    sample_size_cap: int = 10_000
    target_fnr: float | None = None
    full_scan: bool = False


@dataclass(frozen=True)
class LoadedConfig:
    """A fully resolved configuration document."""

    experiment: ExperimentConfig
    budget: ErrorBudget | None
    calibration: CalibrationSettings
    output_format: str | None
    output_path: str | None


def _mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be a mapping, got {type(value).__name__}")
    return dict(value)


def _pop(section: dict, path: str, key: str, required: bool = True, default=None):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key} is required")
        return default
    return section.pop(key)


def _done(section: dict, path: str) -> None:
    if section:
        raise ConfigError(f"unknown key(s) under {path}: {', '.join(sorted(section))}")


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path} must be a boolean, got {value!r}")
    return value


def _parse_model(doc: dict, path: str) -> StreamModel:
    section = _mapping(doc, path)
    if None in section:  # YAML reads an unquoted `null:` key as None
        section["null"] = section.pop(None)
    family = _as_str(_pop(section, path, "family"), f"{path}.family")
    null = _as_number(_pop(section, path, "null"), f"{path}.null")
    alt = _as_number(_pop(section, path, "alt"), f"{path}.alt")
    _done(section, path)
    try:
        return StreamModel(family=family, null=null, alt=alt)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_streams(doc) -> StreamProfile:
    if isinstance(doc, list):
        if len(doc) < 2:
            raise ConfigError("streams list needs at least 2 entries")
        return StreamProfile(
            models=tuple(
                _parse_model(entry, f"streams[{i}]") for i, entry in enumerate(doc)
            )
        )
    section = _mapping(doc, "streams")
    count = _as_int(_pop(section, "streams", "count"), "streams.count")
    if count < 2:
        raise ConfigError(f"streams.count must be >= 2, got {count}")
    model = _parse_model(section, "streams")
    return StreamProfile.homogeneous(model, count)


def _parse_truth(doc, j: int) -> frozenset[int]:
    section = _mapping(doc, "truth")
    has_count = "count" in section
    has_indices = "indices" in section
    if has_count == has_indices:
        raise ConfigError("truth needs exactly one of 'count' or 'indices'")
    if has_count:
        count = _as_int(section.pop("count"), "truth.count")
        if not 0 <= count <= j:
            raise ConfigError(f"truth.count must be in 0..{j}, got {count}")
        truth = frozenset(range(1, count + 1))
    else:
        raw = section.pop("indices")
        if not isinstance(raw, list):
            raise ConfigError("truth.indices must be a list of stream labels")
        labels = [_as_int(x, "truth.indices") for x in raw]
        bad = [x for x in labels if not 1 <= x <= j]
        if bad:
            raise ConfigError(
                f"truth.indices must be in 1..{j}, got {sorted(set(bad))}"
            )
        truth = frozenset(labels)
    _done(section, "truth")
    return truth


def _parse_budget(doc) -> ErrorBudget:
    section = _mapping(doc, "budget")
    alpha = _as_number(_pop(section, "budget", "alpha"), "budget.alpha")
    beta = _as_number(_pop(section, "budget", "beta"), "budget.beta")
    _done(section, "budget")
    for name, value in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < value < 1.0:
            raise ConfigError(f"budget.{name} must be in (0, 1), got {value}")
    return ErrorBudget(alpha=alpha, beta=beta)


def _control_metric(section: dict) -> MetricKind:
    raw = _pop(section, "rule", "control", required=False, default="fdr")
    try:
        return MetricKind(_as_str(raw, "rule.control"))
    except ValueError as exc:
        raise ConfigError(
            f"rule.control must be one of {[k.value for k in MetricKind]}, got {raw!r}"
        ) from exc


def _need_budget(budget: ErrorBudget | None, what: str) -> ErrorBudget:
    if budget is None:
        raise ConfigError(f"{what} set to \"auto\" needs a budget section")
    return budget


def _wrap_rule(build, path: str) -> Rule:
    try:
        return build()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_rule(
    doc,
    j: int,
    truth: frozenset[int],
    budget: ErrorBudget | None,
) -> Rule:
    section = _mapping(doc, "rule")
    kind = _as_str(_pop(section, "rule", "type"), "rule.type")

    if kind == "gap":
        num_signals = _as_int(_pop(section, "rule", "num_signals"), "rule.num_signals")
        control = _control_metric(section)
        raw = _pop(section, "rule", "threshold")
        _done(section, "rule")
        if raw == "auto":
            c1 = bound_constants(control, "gap", j, num_signals=num_signals).c1
            threshold = gap_threshold(
                _need_budget(budget, "rule.threshold"), num_signals, j, c1
            )
        else:
            threshold = _as_number(raw, "rule.threshold")
        return _wrap_rule(
            lambda: GapRule(num_signals=num_signals, threshold=threshold), "rule"
        )

    if kind == "gap-intersection":
        min_signals = _as_int(_pop(section, "rule", "min_signals"), "rule.min_signals")
        max_signals = _as_int(_pop(section, "rule", "max_signals"), "rule.max_signals")
        control = _control_metric(section)
        raw = _pop(section, "rule", "thresholds")
        _done(section, "rule")
        if raw == "auto":
            c1 = bound_constants(
                control,
                "gap-intersection",
                j,
                num_signals=len(truth) or None,
                min_signals=min_signals,
                max_signals=max_signals,
            ).c1
            th = gi_thresholds(
                _need_budget(budget, "rule.thresholds"),
                j,
                min_signals,
                max_signals,
                c1,
            )
            values = {
                "accept_barrier": th.accept_barrier,
                "reject_barrier": th.reject_barrier,
                "accept_gap": th.accept_gap,
                "reject_gap": th.reject_gap,
            }
        else:
            sub = _mapping(raw, "rule.thresholds")
            values = {
                key: _as_number(
                    _pop(sub, "rule.thresholds", key), f"rule.thresholds.{key}"
                )
                for key in (
                    "accept_barrier",
                    "reject_barrier",
                    "accept_gap",
                    "reject_gap",
                )
            }
            _done(sub, "rule.thresholds")
        return _wrap_rule(
            lambda: GapIntersectionRule(
                min_signals=min_signals, max_signals=max_signals, **values
            ),
            "rule",
        )

    if kind == "intersection":
        control = _control_metric(section)
        raw = _pop(section, "rule", "thresholds")
        _done(section, "rule")
        if raw == "auto":
            c1 = bound_constants(
                control,
                "gap-intersection",
                j,
                num_signals=len(truth) or None,
                min_signals=0,
                max_signals=j,
            ).c1
            th = gi_thresholds(
                _need_budget(budget, "rule.thresholds"), j, 0, j, c1
            )
            values = {
                "accept_barrier": th.accept_barrier,
                "reject_barrier": th.reject_barrier,
            }
        else:
            sub = _mapping(raw, "rule.thresholds")
            values = {
                key: _as_number(
                    _pop(sub, "rule.thresholds", key), f"rule.thresholds.{key}"
                )
                for key in ("accept_barrier", "reject_barrier")
            }
            _done(sub, "rule.thresholds")
        return _wrap_rule(lambda: IntersectionRule(**values), "rule")

    if kind == "bh":
        sample_size = _as_int(_pop(section, "rule", "sample_size"), "rule.sample_size")
        raw = _pop(section, "rule", "level", required=False)
        _done(section, "rule")
        if raw is None:
            level = _need_budget(budget, "rule.level (omitted)").alpha
        else:
            level = _as_number(raw, "rule.level")
        return _wrap_rule(lambda: BhRule(sample_size=sample_size, level=level), "rule")

    if kind == "top-m":
        sample_size = _as_int(_pop(section, "rule", "sample_size"), "rule.sample_size")
        num_signals = _as_int(_pop(section, "rule", "num_signals"), "rule.num_signals")
        _done(section, "rule")
        return _wrap_rule(
            lambda: TopMRule(sample_size=sample_size, num_signals=num_signals), "rule"
        )

    raise ConfigError(
        "rule.type must be one of gap, gap-intersection, intersection, bh, "
        f"top-m; got {kind!r}"
    )


def _parse_metrics(raw) -> tuple[MetricKind, ...]:
    if raw is None:
        return (MetricKind.FDR, MetricKind.FNR)
    if not isinstance(raw, list) or not raw:
        raise ConfigError("run.metrics must be a non-empty list of metric names")
    kinds = []
    for name in raw:
        try:
            kinds.append(MetricKind(_as_str(name, "run.metrics")))
        except ValueError as exc:
            raise ConfigError(
                f"run.metrics: unknown metric {name!r}; expected one of "
                f"{[k.value for k in MetricKind]}"
            ) from exc
    return tuple(kinds)


def _parse_calibration(doc) -> CalibrationSettings:
    if doc is None:
        return CalibrationSettings()
    section = _mapping(doc, "calibrate")
    defaults = CalibrationSettings()
    grid_step = _pop(section, "calibrate", "grid_step", required=False)
    threshold_cap = _pop(section, "calibrate", "threshold_cap", required=False)
    sample_size_cap = _pop(section, "calibrate", "sample_size_cap", required=False)
    target_fnr = _pop(section, "calibrate", "target_fnr", required=False)
    full_scan = _pop(section, "calibrate", "full_scan", required=False)
    _done(section, "calibrate")
    settings = CalibrationSettings(
        grid_step=(
            defaults.grid_step
            if grid_step is None
            else _as_number(grid_step, "calibrate.grid_step")
        ),
        threshold_cap=(
            defaults.threshold_cap
            if threshold_cap is None
            else _as_number(threshold_cap, "calibrate.threshold_cap")
        ),
        sample_size_cap=(
            defaults.sample_size_cap
            if sample_size_cap is None
            else _as_int(sample_size_cap, "calibrate.sample_size_cap")
        ),
        target_fnr=(
            None if target_fnr is None else _as_number(target_fnr, "calibrate.target_fnr")
        ),
        full_scan=(
            defaults.full_scan
            if full_scan is None
            else _as_bool(full_scan, "calibrate.full_scan")
        ),
    )
    if settings.grid_step <= 0:
        raise ConfigError(
            f"calibrate.grid_step must be positive, got {settings.grid_step}"
        )
    if settings.target_fnr is not None and not 0 < settings.target_fnr < 1:
        raise ConfigError(
            f"calibrate.target_fnr must be in (0, 1), got {settings.target_fnr}"
        )
    return settings


def build_config(doc, source: str = "<config>") -> LoadedConfig:
    """Assemble a parsed YAML document into a LoadedConfig."""
    top = _mapping(doc, source)
    known = {"streams", "truth", "rule", "budget", "run", "calibrate", "output"}
    unknown = set(top) - known
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {', '.join(sorted(unknown))}")
    for required in ("streams", "truth", "rule", "run"):
        if required not in top:
            raise ConfigError(f"missing required section: {required}")

    profile = _parse_streams(top["streams"])
    truth = _parse_truth(top["truth"], profile.j)
    budget = _parse_budget(top["budget"]) if "budget" in top else None
    rule = _parse_rule(top["rule"], profile.j, truth, budget)

    run = _mapping(top["run"], "run")
    replications = _as_int(_pop(run, "run", "replications"), "run.replications")
    seed = _as_int(_pop(run, "run", "seed"), "run.seed")
    horizon_raw = _pop(run, "run", "horizon", required=False)
    horizon = (
        DEFAULT_HORIZON if horizon_raw is None else _as_int(horizon_raw, "run.horizon")
    )
    metrics = _parse_metrics(_pop(run, "run", "metrics", required=False))
    _done(run, "run")
    if replications < 1:
        raise ConfigError(f"run.replications must be >= 1, got {replications}")
    if horizon < 1:
        raise ConfigError(f"run.horizon must be >= 1, got {horizon}")

    output_format = None
    output_path = None
    if "output" in top:
        out = _mapping(top["output"], "output")
        fmt = _pop(out, "output", "format", required=False)
        if fmt is not None:
            output_format = _as_str(fmt, "output.format")
            if output_format not in FORMATS:
                raise ConfigError(
                    f"output.format must be one of {FORMATS}, got {output_format!r}"
                )
        path = _pop(out, "output", "path", required=False)
        if path is not None:
            output_path = _as_str(path, "output.path")
        _done(out, "output")

    calibration = _parse_calibration(top.get("calibrate"))

    # Semantic assembly: errors from here on are the library's own and are
    # the CLI's runtime class, not configuration errors.
    experiment = ExperimentConfig(
        profile=profile,
        truth=truth,
        rule=rule,
        replications=replications,
        master_seed=seed,
        horizon=horizon,
        metrics=metrics,
    )
    return LoadedConfig(
        experiment=experiment,
        budget=budget,
        calibration=calibration,
        output_format=output_format,
        output_path=output_path,
    )


def load_config(path: str) -> LoadedConfig:
    """Read and assemble a YAML configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return build_config(doc, source=path)
