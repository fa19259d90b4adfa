"""Layer-wise hyperparameter allocation driven by tail exponents.

Two allocators share one direction convention, asserted here once and
covered by tests because inverting it silently inverts the method:
a larger tail exponent means a lighter-tailed, less-trained layer, which
receives a larger learning rate and a larger pruning ratio.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import AllocationError, InfeasibleAllocationError

__all__ = [
    "LSConfig",
    "LRScheduleConfig",
    "SparsityConfig",
    "AllocationEntry",
    "AllocationResult",
    "select_layers",
    "assign_learning_rates",
    "assign_sparsities",
    "allocation_to_csv",
    "ls_config_from_dict",
    "lr_config_from_dict",
    "sparsity_config_from_dict",
]

METRICS = ("baseline", "farms")

MAX_CORRECTION_ITERATIONS = 8
BUDGET_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LSConfig:
    """Layer-selection heuristic for learning-rate scheduling.

    Excluded layers keep the global rate instead of a scaled one.
    ``max_aspect_ratio`` only applies when allocating from baseline
    exponents; subsampled exponents are shape-robust, so the aspect
    filter would throw away layers they handle fine.
    """

    exclude_first_last: bool = True
    min_esd_size: int = 32
    max_aspect_ratio: float = 5.0

    def __post_init__(self):
        if self.min_esd_size < 1:
            raise ValueError("min_esd_size must be >= 1")
        if self.max_aspect_ratio <= 0.0:
            raise ValueError("max_aspect_ratio must be positive")


@dataclass(frozen=True)
class LRScheduleConfig:
    """Settings for alpha-driven learning-rate assignment.

    Scaled rates live in [s1*eta_t, s2*eta_t].  ``mapping`` is either
    "linear_minmax" (min alpha at the lower bound, max at the upper) or
    "sigmoid" (logistic squash of the standardized alpha; its sharpness
    is set by ``temperature``).
    """

    eta_t: float
    s1: float = 0.5
    s2: float = 1.5
    mapping: str = "linear_minmax"
    temperature: float = 1.0
    layer_selection: LSConfig | None = field(default=LSConfig())

    def __post_init__(self):
        if self.eta_t <= 0.0:
            raise ValueError("eta_t must be positive")
        if not 0.0 < self.s1 <= self.s2:
            raise ValueError("need 0 < s1 <= s2")
        if self.mapping not in ("linear_minmax", "sigmoid"):
            raise ValueError(f"unknown mapping {self.mapping!r}")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class SparsityConfig:
    """Settings for alpha-driven sparsity assignment.

    Raw per-layer ratios spread +-tau around ``target``; a correction
    then restores the parameter-weighted mean to ``target`` exactly,
    within the clamp interval.
    """

    target: float
    tau: float = 0.1
    weight_by_params: bool = True
    clamp: tuple = (0.0, 0.99)

    def __post_init__(self):
        if not 0.0 <= self.target < 1.0:
            raise ValueError("target must lie in [0, 1)")
        if self.tau < 0.0:
            raise ValueError("tau must be >= 0")
        clamp = (float(self.clamp[0]), float(self.clamp[1]))
        if not 0.0 <= clamp[0] < clamp[1] <= 1.0:
            raise ValueError("clamp must satisfy 0 <= lo < hi <= 1")
        object.__setattr__(self, "clamp", clamp)


@dataclass(frozen=True)
class AllocationEntry:
    name: str
    alpha_baseline: float | None
    alpha_farms: float | None
    value: float
    excluded: bool
    reason: str = ""


@dataclass(frozen=True)
class AllocationResult:
    """Ordered per-layer values plus the achieved-constraint summary."""

    kind: str
    metric: str
    per_layer: tuple
    constraint_report: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "metric": self.metric,
            "per_layer": [
                {
                    "layer": e.name,
                    "alpha_baseline": e.alpha_baseline,
                    "alpha_farms": e.alpha_farms,
                    "value": e.value,
                    "excluded": e.excluded,
                    "reason": e.reason,
                }
                for e in self.per_layer
            ],
            "constraint_report": self.constraint_report,
        }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def allocation_to_csv(result: AllocationResult) -> str:
    """Render an allocation as CSV with one row per layer."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "alpha_baseline", "alpha_farms", "value",
                     "excluded", "reason"])
    for e in result.per_layer:
        writer.writerow([e.name, _fmt(e.alpha_baseline), _fmt(e.alpha_farms),
                         _fmt(e.value), _fmt(e.excluded), e.reason])
    return buf.getvalue()


def _metric_alpha(report, metric: str):
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    return report.baseline_alpha if metric == "baseline" else report.farms_alpha


def _with_reason(report, reason: str):
    if reason in report.reason:
        return report
    joined = f"{report.reason}; {reason}" if report.reason else reason
    return replace(report, excluded=True, reason=joined)


def select_layers(reports, ls: LSConfig | None, metric: str = "farms"):
    """Apply the layer-selection heuristic, returning flagged copies.

    Flags the first and last analyzable layers, layers with fewer than
    ``min_esd_size`` eigenvalues, and (baseline metric only) layers whose
    aspect ratio exceeds ``max_aspect_ratio``.  ``ls=None`` disables
    selection entirely and returns the reports untouched.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if ls is None:
        return list(reports)
    reports = list(reports)
    analyzable = [i for i, r in enumerate(reports)
                  if r.baseline_alpha is not None]
    out = list(reports)
    if ls.exclude_first_last and analyzable:
        out[analyzable[0]] = _with_reason(out[analyzable[0]], "first layer")
        out[analyzable[-1]] = _with_reason(out[analyzable[-1]], "last layer")
    for i, report in enumerate(out):
        dims = report.shape[:2]
        if min(dims) < ls.min_esd_size:
            out[i] = _with_reason(out[i], "few eigenvalues")
        if metric == "baseline" and max(dims) / min(dims) > ls.max_aspect_ratio:
            out[i] = _with_reason(out[i], "extreme aspect ratio")
    return out


def _logistic(x: float) -> float:
    x = max(-60.0, min(60.0, x))
    return 1.0 / (1.0 + math.exp(-x))


def assign_learning_rates(reports, cfg: LRScheduleConfig,
                          metric: str = "farms") -> AllocationResult:
    """Map per-layer exponents to learning rates in [s1*eta, s2*eta].

    Layer selection from the config is applied first; excluded layers
    (and layers whose analysis errored) receive exactly eta_t.  With
    all included exponents equal, every included layer gets the midpoint
    rate eta*(s1+s2)/2.
    """
    flagged = select_layers(reports, cfg.layer_selection, metric)
    included = [(i, _metric_alpha(r, metric)) for i, r in enumerate(flagged)
                if not r.excluded and _metric_alpha(r, metric) is not None]
    if not included:
        raise AllocationError("no non-excluded layers to schedule")
    alphas = np.array([a for _, a in included], dtype=np.float64)
    lo, hi = cfg.s1 * cfg.eta_t, cfg.s2 * cfg.eta_t
    if cfg.mapping == "linear_minmax":
        a_min, a_max = float(alphas.min()), float(alphas.max())
        if a_max == a_min:
            scaled = np.full(len(alphas), 0.5 * (lo + hi))
        else:
            unit = (alphas - a_min) / (a_max - a_min)
            # convex form: endpoints land exactly on lo and hi
            scaled = lo * (1.0 - unit) + hi * unit
    else:
        std = float(alphas.std())
        if std == 0.0:
            unit = np.full(len(alphas), 0.5)
        else:
            z = (alphas - float(alphas.mean())) / std
            unit = np.array([_logistic(v / cfg.temperature) for v in z])
        scaled = lo + (hi - lo) * unit
    values = {i: float(v) for (i, _), v in zip(included, scaled)}
    entries = []
    for i, report in enumerate(flagged):
        excluded = i not in values
        entries.append(AllocationEntry(
            name=report.name,
            alpha_baseline=report.baseline_alpha,
            alpha_farms=report.farms_alpha,
            value=values.get(i, cfg.eta_t),
            excluded=excluded,
            reason=report.reason if excluded else "",
        ))
    constraint = {
        "eta_t": cfg.eta_t,
        "bound_lower": lo,
        "bound_upper": hi,
        "included_count": len(included),
        "excluded_count": len(entries) - len(included),
    }
    return AllocationResult(kind="learning_rate", metric=metric,
                            per_layer=tuple(entries),
                            constraint_report=constraint)


def _param_count(report) -> int:
    count = 1
    for dim in report.shape:
        count *= int(dim)
    return count


def assign_sparsities(reports, cfg: SparsityConfig,
                      metric: str = "farms") -> AllocationResult:
    """Map per-layer exponents to pruning ratios with an exact budget.

    Raw ratios are (target - tau) + 2*tau*(alpha - min)/(max - min), so
    lighter-tailed layers are pruned harder.  A uniform additive
    correction restores the parameter-weighted mean to ``target``; after
    clamping, the residual is redistributed over unclamped layers for up
    to 8 rounds.  Pruning excludes no layers: every layer with an
    exponent is assigned, and layers whose analysis errored are pinned at
    ``target`` so the overall budget is unaffected.
    """
    reports = list(reports)
    if not reports:
        raise AllocationError("no layers to allocate sparsity for")
    lo, hi = cfg.clamp
    usable = [(i, _metric_alpha(r, metric)) for i, r in enumerate(reports)
              if _metric_alpha(r, metric) is not None]
    if not usable:
        raise AllocationError("no layers carry the requested metric")
    alphas = np.array([a for _, a in usable], dtype=np.float64)
    weights = np.array(
        [_param_count(reports[i]) if cfg.weight_by_params else 1.0
         for i, _ in usable], dtype=np.float64)
    total_weight = float(weights.sum())

    a_min, a_max = float(alphas.min()), float(alphas.max())
    if a_max == a_min:
        values = np.full(len(alphas), cfg.target)
    else:
        unit = (alphas - a_min) / (a_max - a_min)
        values = (cfg.target - cfg.tau) + 2.0 * cfg.tau * unit

    def weighted_mean(v):
        return float(np.dot(v, weights) / total_weight)

    # uniform shift first, then clamp, then redistribute the clamping
    # residue over layers that can still move
    values = values + (cfg.target - weighted_mean(values))
    values = np.clip(values, lo, hi)
    iterations = 1
    for _ in range(MAX_CORRECTION_ITERATIONS - 1):
        residual = cfg.target - weighted_mean(values)
        if abs(residual) <= 1e-12:
            break
        free = values < hi if residual > 0 else values > lo
        if not free.any():
            break
        free_weight = float(weights[free].sum())
        values[free] += residual * total_weight / free_weight
        values = np.clip(values, lo, hi)
        iterations += 1
    achieved = weighted_mean(values)
    if abs(achieved - cfg.target) > BUDGET_TOLERANCE:
        raise InfeasibleAllocationError(
            f"cannot reach weighted mean sparsity {cfg.target} within the "
            f"clamp interval [{lo}, {hi}]; achieved {achieved:.6f}")

    by_index = {i: float(v) for (i, _), v in zip(usable, values)}
    entries = []
    for i, report in enumerate(reports):
        has_metric = i in by_index
        entries.append(AllocationEntry(
            name=report.name,
            alpha_baseline=report.baseline_alpha,
            alpha_farms=report.farms_alpha,
            value=by_index.get(i, cfg.target),
            excluded=not has_metric,
            reason=report.reason if not has_metric else "",
        ))
    constraint = {
        "target": cfg.target,
        "achieved_mean": achieved,
        "bound_lower": lo,
        "bound_upper": hi,
        "iterations": iterations,
        "included_count": len(usable),
        "excluded_count": len(entries) - len(usable),
    }
    return AllocationResult(kind="sparsity", metric=metric,
                            per_layer=tuple(entries),
                            constraint_report=constraint)


def _reject_unknown(data, allowed, label):
    unknown = set(data) - set(allowed)
    if unknown:
        raise ValueError(f"unknown {label} key(s): {sorted(unknown)}")


def ls_config_from_dict(data, base: LSConfig | None = None) -> LSConfig | None:
    """None or {"enabled": false} disables selection entirely."""
    if data is None:
        return None
    base = base if base is not None else LSConfig()
    _reject_unknown(data, ("enabled", "exclude_first_last", "min_esd_size",
                           "max_aspect_ratio"), "layer-selection config")
    if data.get("enabled") is False:
        return None
    return LSConfig(
        exclude_first_last=data.get("exclude_first_last",
                                    base.exclude_first_last),
        min_esd_size=data.get("min_esd_size", base.min_esd_size),
        max_aspect_ratio=data.get("max_aspect_ratio", base.max_aspect_ratio),
    )


def lr_config_from_dict(data, base: LRScheduleConfig | None = None
                        ) -> LRScheduleConfig:
    _reject_unknown(data, ("eta_t", "s1", "s2", "mapping", "temperature",
                           "layer_selection"), "learning-rate config")
    if base is None:
        if "eta_t" not in data:
            raise ValueError("learning-rate config requires eta_t")
        base = LRScheduleConfig(eta_t=data["eta_t"])
    ls = base.layer_selection
    if "layer_selection" in data:
        ls = ls_config_from_dict(data["layer_selection"], base.layer_selection)
    return LRScheduleConfig(
        eta_t=data.get("eta_t", base.eta_t),
        s1=data.get("s1", base.s1),
        s2=data.get("s2", base.s2),
        mapping=data.get("mapping", base.mapping),
        temperature=data.get("temperature", base.temperature),
        layer_selection=ls,
    )


def sparsity_config_from_dict(data, base: SparsityConfig | None = None
                              ) -> SparsityConfig:
    _reject_unknown(data, ("target", "tau", "weight_by_params", "clamp"),
                    "sparsity config")
    if base is None:
        if "target" not in data:
            raise ValueError("sparsity config requires target")
        base = SparsityConfig(target=data["target"])
    clamp = data.get("clamp", base.clamp)
    return SparsityConfig(
        target=data.get("target", base.target),
        tau=data.get("tau", base.tau),
        weight_by_params=data.get("weight_by_params", base.weight_by_params),
        clamp=tuple(clamp),
    )
