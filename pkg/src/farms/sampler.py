"""Fixed-aspect-ratio sliding-window subsampling of weight matrices.

Tail-exponent estimates computed on a whole weight matrix drift upward
with the matrix aspect ratio even for i.i.d. entries, which makes layers
of different shapes incomparable.  The sampler cuts submatrices that all
share one target aspect ratio Q, pools their eigenvalue spectra, and fits
the tail exponent on the pooled spectrum instead, so the shape of the
full matrix stops leaking into the estimate.
"""

from __future__ import annotations

import fnmatch
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import FarmsError, PlanError, SpectrumError
from .spectral import (
    ESD,
    HillConfig,
    concatenate_esds,
    esd_of_matrix,
    hill_alpha,
)
from .tensorio import WeightTensor, load_tensor

__all__ = [
    "SubsampleConfig",
    "SubsamplePlan",
    "LayerReport",
    "ModelReport",
    "plan_subsamples",
    "farms_esd_linear",
    "farms_alpha_linear",
    "farms_alpha_conv",
    "analyze_layer",
    "analyze_model",
    "subsample_config_from_dict",
    "resolve_layer_config",
]

CONV_AGGREGATIONS = ("average_per_block", "concatenate_all")

_CONFIG_KEYS = ("q_ratio", "window", "steps", "conv_aggregation",
                "clamp_window", "hill")
_HILL_KEYS = ("k_fraction", "k_fixed", "eps")


@dataclass(frozen=True)
class SubsampleConfig:
    """How to cut a layer into fixed-aspect submatrices.

    Parameters
    ----------
    q_ratio : float
        Target aspect ratio rows/cols of each submatrix, in the oriented
        frame where rows >= cols for the full matrix.
    window : tuple or None
        Explicit (rows, cols) submatrix size, or None to derive the
        window from the matrix's own minimum dimension.
    steps : tuple or None
        Explicit (row_steps, col_steps) grid of window positions in the
        oriented frame, or None to slide floor(m/n) windows along the
        long axis only.
    conv_aggregation : str
        "average_per_block" fits one exponent per channel block and
        averages them; "concatenate_all" pools everything first and fits
        once.
    hill : HillConfig
        Tail-fit settings shared by baseline and subsampled estimates.
    clamp_window : bool
        Shrink an oversized explicit window to the matrix instead of
        raising.
    """

    q_ratio: float = 1.0
    window: tuple | None = None
    steps: tuple | None = None
    conv_aggregation: str = "average_per_block"
    hill: HillConfig = field(default=HillConfig())
    clamp_window: bool = True

    def __post_init__(self):
        if not self.q_ratio > 0.0:
            raise ValueError("q_ratio must be positive")
        if self.window is not None:
            window = tuple(int(v) for v in self.window)
            if len(window) != 2 or min(window) < 1:
                raise ValueError("window must be two positive integers")
            rows, cols = window
            if abs(rows - round(self.q_ratio * cols)) > 1:
                raise ValueError(
                    f"window {rows}x{cols} does not have aspect ratio "
                    f"{self.q_ratio} within integer rounding")
            object.__setattr__(self, "window", window)
        if self.steps is not None:
            steps = tuple(int(v) for v in self.steps)
            if len(steps) != 2 or min(steps) < 1:
                raise ValueError("steps must be two integers >= 1")
            object.__setattr__(self, "steps", steps)
        if self.conv_aggregation not in CONV_AGGREGATIONS:
            raise ValueError(
                f"conv_aggregation must be one of {CONV_AGGREGATIONS}")


@dataclass(frozen=True)
class SubsamplePlan:
    """Window size and top-left offsets, in the original matrix frame."""

    window: tuple
    offsets: tuple
    covers_full_matrix: bool
    q_violated: bool = False

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class LayerReport:
    """Per-layer analysis result.

    ``baseline_alpha`` is fitted on the whole-matrix spectrum,
    ``farms_alpha`` on the pooled fixed-aspect subsample spectrum.  Both
    are None when the layer errored; ``reason`` then starts with
    "error:".
    """

    name: str
    kind: str
    shape: tuple
    baseline_alpha: float | None
    farms_alpha: float | None
    esd_size_baseline: int
    esd_size_farms: int
    submatrix_count: int
    excluded: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "shape": list(self.shape),
            "baseline_alpha": self.baseline_alpha,
            "farms_alpha": self.farms_alpha,
            "esd_size_baseline": self.esd_size_baseline,
            "esd_size_farms": self.esd_size_farms,
            "submatrix_count": self.submatrix_count,
            "excluded": self.excluded,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class ModelReport:
    """All layer reports for one checkpoint plus summary statistics."""

    model_name: str
    layers: tuple
    summary: dict

    @property
    def error_count(self) -> int:
        return sum(1 for r in self.layers if r.reason.startswith("error:"))

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "layers": [r.to_dict() for r in self.layers],
            "summary": self.summary,
        }


def _window_for(oriented_shape, cfg: SubsampleConfig):
    """Window (rows, cols) for an oriented shape with rows >= cols,
    plus a flag saying the target aspect ratio had to be given up."""
    big, small = oriented_shape
    if cfg.window is None:
        rows = small
        want = math.floor(small / cfg.q_ratio)
        cols = min(max(want, 1), small)
        return (rows, cols), cols != want
    rows, cols = cfg.window
    if rows <= big and cols <= small:
        return (rows, cols), False
    if not cfg.clamp_window:
        raise PlanError(
            f"window {rows}x{cols} does not fit matrix "
            f"{big}x{small} and clamping is disabled")
    return (min(rows, big), min(cols, small)), True


def _axis_offsets(dim: int, win: int, count: int):
    """Evenly spaced offsets along one axis: nearest-integer stride with
    the final window pinned to the far edge, deduplicated."""
    span = dim - win
    if count == 1 or span == 0:
        return [0]
    stride = round(span / (count - 1))
    offsets = {min(j * stride, span) for j in range(count - 1)}
    offsets.add(span)
    return sorted(offsets)


def _axis_covered(offsets, win: int, dim: int) -> bool:
    reach = 0
    for off in offsets:
        if off > reach:
            return False
        reach = max(reach, off + win)
    return reach >= dim


def plan_subsamples(shape, cfg: SubsampleConfig = SubsampleConfig()) -> SubsamplePlan:
    """Lay out fixed-aspect windows over a matrix shape.

    The matrix is oriented internally so rows >= cols; ``window`` and
    ``steps`` in the config refer to that frame.  Returned window and
    offsets are mapped back to the original frame, offsets sorted
    row-major with every window in bounds.
    """
    try:
        m, n = (int(v) for v in shape)
    except (TypeError, ValueError):
        raise PlanError(f"shape must be two integers, got {shape!r}") from None
    if m < 1 or n < 1:
        raise PlanError(f"matrix dimensions must be >= 1, got {m}x{n}")
    transposed = m < n
    big, small = (n, m) if transposed else (m, n)
    (w_rows, w_cols), q_violated = _window_for((big, small), cfg)
    if cfg.steps is None:
        row_steps, col_steps = max(1, big // small), 1
    else:
        row_steps, col_steps = cfg.steps
    row_offsets = _axis_offsets(big, w_rows, row_steps)
    col_offsets = _axis_offsets(small, w_cols, col_steps)
    covers = (_axis_covered(row_offsets, w_rows, big)
              and _axis_covered(col_offsets, w_cols, small))
    pairs = [(r, c) for r in row_offsets for c in col_offsets]
    window = (w_rows, w_cols)
    if transposed:
        pairs = sorted((c, r) for r, c in pairs)
        window = (w_cols, w_rows)
    return SubsamplePlan(window=window, offsets=tuple(pairs),
                         covers_full_matrix=covers, q_violated=q_violated)


def farms_esd_linear(matrix, cfg: SubsampleConfig = SubsampleConfig(), *,
                     plan: SubsamplePlan | None = None,
                     context: str = "") -> ESD:
    """Pooled spectrum of all planned submatrices of a 2-D layer.

    Eigenvalues from every window are concatenated and re-sorted; with
    equal-sized windows this equals averaging the per-window empirical
    densities.  Each window is analyzed via its singular values, so a
    window and its transpose contribute identically.
    """
    w = np.asarray(matrix, dtype=np.float64)
    if w.ndim != 2:
        raise SpectrumError(
            f"{context + ': ' if context else ''}expected a 2-D matrix, "
            f"got ndim={w.ndim}")
    if plan is None:
        plan = plan_subsamples(w.shape, cfg)
    rows, cols = plan.window
    parts = []
    for r, c in plan.offsets:
        label = f"{context} window ({r},{c})".strip()
        parts.append(esd_of_matrix(w[r:r + rows, c:c + cols], context=label))
    return concatenate_esds(parts)


def farms_alpha_linear(matrix, cfg: SubsampleConfig = SubsampleConfig(), *,
                       context: str = "") -> float:
    """Tail exponent of the pooled subsample spectrum of a 2-D layer."""
    esd = farms_esd_linear(matrix, cfg, context=context)
    return hill_alpha(esd, cfg.hill, context=context)


def _conv_block_esds(tensor, cfg: SubsampleConfig, context: str = ""):
    """Pooled spectra of the channel blocks of a conv tensor.

    The kernel axes are flattened into l' = kH*kW channel slices of shape
    C1 x C2 (oriented so C1 >= C2).  A non-overlapping grid of
    floor(C1/rows) x floor(C2/cols) blocks is tiled over the slice shape,
    and each block's spectra are pooled across all l' slices.  Returns
    (block ESD list in row-major block order, slice count).
    """
    where = f"{context}: " if context else ""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 4:
        raise SpectrumError(
            f"{where}expected a 4-D conv tensor, got ndim={t.ndim}")
    c1, c2, kh, kw = t.shape
    n_slices = kh * kw
    slices = t.reshape(c1, c2, n_slices)
    if c1 < c2:
        slices = slices.transpose(1, 0, 2)
        c1, c2 = c2, c1
    if c1 * c2 < 4:
        raise PlanError(
            f"{where}channel block {c1}x{c2} is too small to analyze")
    (w_rows, w_cols), _ = _window_for((c1, c2), cfg)
    grid_rows = c1 // w_rows
    grid_cols = c2 // w_cols
    if grid_rows < 1 or grid_cols < 1:
        # oversized window: analyze the full slice as a single block
        w_rows, w_cols = c1, c2
        grid_rows = grid_cols = 1
    block_esds = []
    for bi in range(grid_rows):
        for bj in range(grid_cols):
            r0, c0 = bi * w_rows, bj * w_cols
            parts = [
                esd_of_matrix(
                    slices[r0:r0 + w_rows, c0:c0 + w_cols, s],
                    context=f"{context} block ({bi},{bj}) slice {s}".strip())
                for s in range(n_slices)
            ]
            block_esds.append(concatenate_esds(parts))
    return block_esds, n_slices


def farms_alpha_conv(tensor, cfg: SubsampleConfig = SubsampleConfig(), *,
                     context: str = "") -> float:
    """Tail exponent of a 4-D conv tensor from its channel-block spectra.

    With ``average_per_block`` each block gets its own fit and the block
    exponents are averaged; with ``concatenate_all`` every block's
    spectrum is pooled first and fitted once.
    """
    block_esds, _ = _conv_block_esds(tensor, cfg, context)
    if cfg.conv_aggregation == "concatenate_all":
        return hill_alpha(concatenate_esds(block_esds), cfg.hill,
                          context=context)
    alphas = [
        hill_alpha(esd, cfg.hill, context=f"{context} block {i}".strip())
        for i, esd in enumerate(block_esds)
    ]
    return float(np.mean(alphas))


def _conv_baseline_esd(tensor, context: str = "") -> ESD:
    t = np.asarray(tensor, dtype=np.float64)
    c1, c2 = t.shape[0], t.shape[1]
    flat = t.reshape(c1, c2, -1)
    parts = [
        esd_of_matrix(flat[:, :, s], context=f"{context} slice {s}".strip())
        for s in range(flat.shape[2])
    ]
    return concatenate_esds(parts)


def analyze_layer(tensor: WeightTensor, cfg: SubsampleConfig = SubsampleConfig(),
                  *, exclude=None) -> LayerReport:
    """Baseline and fixed-aspect tail exponents for one loaded layer.

    ``exclude`` is an optional callable mapping the draft report to a
    reason string (or None); a non-empty reason marks the layer excluded
    while keeping both exponents.
    """
    entry = tensor.entry
    name = entry.name
    if entry.kind == "linear":
        baseline_esd = esd_of_matrix(tensor.data, context=name)
        plan = plan_subsamples(tensor.data.shape, cfg)
        farms_esd = farms_esd_linear(tensor.data, cfg, plan=plan,
                                     context=name)
        baseline = hill_alpha(baseline_esd, cfg.hill, context=name)
        farms = hill_alpha(farms_esd, cfg.hill, context=name)
        esd_farms_size = len(farms_esd)
        submatrices = len(plan.offsets)
    else:
        baseline_esd = _conv_baseline_esd(tensor.data, context=name)
        baseline = hill_alpha(baseline_esd, cfg.hill, context=name)
        block_esds, n_slices = _conv_block_esds(tensor.data, cfg, name)
        if cfg.conv_aggregation == "concatenate_all":
            farms = hill_alpha(concatenate_esds(block_esds), cfg.hill,
                               context=name)
        else:
            farms = float(np.mean([
                hill_alpha(esd, cfg.hill, context=f"{name} block {i}")
                for i, esd in enumerate(block_esds)
            ]))
        esd_farms_size = sum(len(esd) for esd in block_esds)
        submatrices = len(block_esds) * n_slices
    report = LayerReport(
        name=name,
        kind=entry.kind,
        shape=entry.shape,
        baseline_alpha=baseline,
        farms_alpha=farms,
        esd_size_baseline=len(baseline_esd),
        esd_size_farms=esd_farms_size,
        submatrix_count=submatrices,
    )
    if exclude is not None:
        reason = exclude(report)
        if reason:
            report = replace(report, excluded=True, reason=reason)
    return report


def _error_report(entry, exc) -> LayerReport:
    return LayerReport(
        name=entry.name,
        kind=entry.kind,
        shape=entry.shape,
        baseline_alpha=None,
        farms_alpha=None,
        esd_size_baseline=0,
        esd_size_farms=0,
        submatrix_count=0,
        excluded=True,
        reason=f"error: {exc}",
    )


def summarize_reports(reports) -> dict:
    """Mean and population STD of both exponents over included layers."""
    included = [r for r in reports
                if not r.excluded and r.baseline_alpha is not None]
    summary = {
        "layer_count": len(reports),
        "included_count": len(included),
        "error_count": sum(1 for r in reports
                           if r.reason.startswith("error:")),
    }
    for key, attr in (("baseline", "baseline_alpha"), ("farms", "farms_alpha")):
        values = [getattr(r, attr) for r in included]
        if values:
            summary[key] = {"mean": float(np.mean(values)),
                            "std": float(np.std(values))}
        else:
            summary[key] = {"mean": None, "std": None}
    return summary


def analyze_model(manifest, cfg: SubsampleConfig = SubsampleConfig(), *,
                  manifest_dir, overrides=None, threads: int = 1,
                  exclude=None) -> ModelReport:
    """Analyze every manifest layer; never aborts on a single bad layer.

    Failed layers become excluded reports whose reason starts with
    "error:".  Layers run concurrently when ``threads`` > 1; reports are
    always assembled in manifest order, so output is identical for any
    thread count.
    """

    def one(entry):
        try:
            tensor = load_tensor(manifest_dir, entry)
            layer_cfg = resolve_layer_config(cfg, overrides, entry.name)
            return analyze_layer(tensor, layer_cfg, exclude=exclude)
        except FarmsError as exc:
            return _error_report(entry, exc)

    entries = list(manifest.layers)
    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, entries))
    else:
        reports = [one(entry) for entry in entries]
    return ModelReport(
        model_name=manifest.model_name,
        layers=tuple(reports),
        summary=summarize_reports(reports),
    )


def _hill_from_dict(data, base: HillConfig) -> HillConfig:
    unknown = set(data) - set(_HILL_KEYS)
    if unknown:
        raise ValueError(f"unknown hill config key(s): {sorted(unknown)}")
    kwargs = {
        "k_fraction": base.k_fraction,
        "k_fixed": base.k_fixed,
        "eps": base.eps,
    }
    if "k_fraction" in data:
        kwargs["k_fraction"] = data["k_fraction"]
        if "k_fixed" not in data:
            kwargs["k_fixed"] = None
    if "k_fixed" in data:
        kwargs["k_fixed"] = data["k_fixed"]
    if "eps" in data:
        kwargs["eps"] = data["eps"]
    return HillConfig(**kwargs)


def subsample_config_from_dict(data, base: SubsampleConfig | None = None
                               ) -> SubsampleConfig:
    """Build a config from a JSON-shaped dict, layered over ``base``.

    ``window`` accepts [rows, cols], "min_dimension", or null;
    ``steps`` accepts [row_steps, col_steps], "auto", or null.
    Unknown keys raise ValueError.
    """
    if not isinstance(data, dict):
        raise ValueError("subsample config must be a JSON object")
    base = base if base is not None else SubsampleConfig()
    unknown = set(data) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown subsample config key(s): {sorted(unknown)}")
    window = base.window
    if "window" in data:
        value = data["window"]
        if value in (None, "min_dimension"):
            window = None
        else:
            window = tuple(value)
    steps = base.steps
    if "steps" in data:
        value = data["steps"]
        if value in (None, "auto"):
            steps = None
        else:
            steps = tuple(value)
    hill = base.hill
    if "hill" in data:
        hill = _hill_from_dict(data["hill"], base.hill)
    return SubsampleConfig(
        q_ratio=data.get("q_ratio", base.q_ratio),
        window=window,
        steps=steps,
        conv_aggregation=data.get("conv_aggregation", base.conv_aggregation),
        hill=hill,
        clamp_window=data.get("clamp_window", base.clamp_window),
    )


def resolve_layer_config(base: SubsampleConfig, overrides, name: str
                         ) -> SubsampleConfig:
    """Apply every override whose glob pattern matches ``name``, in
    mapping order; later matches win field by field."""
    if not overrides:
        return base
    cfg = base
    for pattern, partial in overrides.items():
        if fnmatch.fnmatchcase(name, pattern):
            cfg = subsample_config_from_dict(partial, base=cfg)
    return cfg
