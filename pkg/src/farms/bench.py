"""Seeded synthetic benchmarks.

Four desk-scale experiments: Marchenko-Pastur convergence of Gaussian
spectra, the aspect-ratio bias sweep over random He-initialized matrices,
tail-exponent recovery on exact Pareto samples, and a teacher-student
training run that correlates subsampled tail exponents with how well the
student recovers the teacher direction.

Every result here is a pure function of (config, seed).  All randomness
flows through counter-based Philox generators keyed by
``SeedSequence(seed, spawn_key=...)`` so trials can run in any order, or
in parallel, without changing a single output bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import FarmsError, TrainingDivergedError
from .sampler import SubsampleConfig, farms_alpha_linear
from .spectral import (
    ESD,
    HillConfig,
    esd_of_matrix,
    hill_alpha,
    ks_distance_to_mp,
    mp_atom_mass,
    mp_bulk_edges,
    mp_density,
)

__all__ = [
    "GaussianSpec",
    "gen_gaussian",
    "BiasSweepResult",
    "bias_sweep",
    "hill_validation",
    "mp_comparison_data",
    "ToyExperimentConfig",
    "AlignmentPoint",
    "AlignmentSeries",
    "CorrelationSummary",
    "toy_sampler_config",
    "teacher_student_run",
    "alignment_correlation",
    "pearson_correlation",
    "toy_config_from_dict",
]

VARIANCE_MODES = ("unit", "he_fan_in")
ACTIVATIONS = ("relu", "tanh")


def _philox(seed, spawn_key=()) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def _child_seed(seed, spawn_key) -> int:
    """Derive an independent 64-bit stream key for one trial."""
    seq = np.random.SeedSequence(seed, spawn_key=spawn_key)
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class GaussianSpec:
    """Shape, variance convention, and seed of one random matrix draw."""

    m: int
    n: int
    variance_mode: str = "unit"
    seed: int = 0

    def __post_init__(self):
        for label, value in (("m", self.m), ("n", self.n)):
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{label} must be a positive integer")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def gen_gaussian(spec: GaussianSpec) -> np.ndarray:
    """Draw the m x n i.i.d. normal matrix described by ``spec``.

    ``he_fan_in`` scales entries to variance 2/n, treating the column
    count as the fan-in.  Same spec, same bits.
    """
    rng = _philox(spec.seed)
    matrix = rng.standard_normal((spec.m, spec.n))
    if spec.variance_mode == "he_fan_in":
        matrix *= math.sqrt(2.0 / spec.n)
    return matrix


# ---------------------------------------------------------------------------
# Aspect-ratio bias sweep


@dataclass(frozen=True)
class BiasSweepResult:
    """Per-shape alpha statistics plus the cross-shape spread of means."""

    rows: tuple
    ranges: dict
    errors: tuple = ()
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "rows": [dict(r) for r in self.rows],
            "ranges": dict(self.ranges),
            "errors": [dict(e) for e in self.errors],
            "seed": self.seed,
        }


def _mean_std(values):
    if not values:
        return None, None
    return float(np.mean(values)), float(np.std(values))


def bias_sweep(shapes, trials: int, cfg: SubsampleConfig = SubsampleConfig(),
               seed: int = 0, *, threads: int = 1) -> BiasSweepResult:
    """Estimate both alphas over He-initialized random matrices.

    For each shape, ``trials`` independent draws are analyzed with the
    whole-matrix estimator and with the subsampling plan from ``cfg``.
    A failed trial is recorded and skipped; the sweep keeps going.
    The ``ranges`` entry holds max - min of the per-shape mean alphas,
    one value per metric: random matrices have no tail structure, so a
    shape-independent estimator should show a much smaller range.
    """
    shapes = [tuple(int(v) for v in s) for s in shapes]
    if not shapes:
        raise ValueError("shapes must be non-empty")
    for s in shapes:
        if len(s) != 2 or min(s) < 1:
            raise ValueError(f"invalid shape {s}")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(task):
        i, t = task
        m, n = shapes[i]
        matrix = gen_gaussian(
            GaussianSpec(m, n, "he_fan_in", _child_seed(seed, (i, t))))
        ctx = f"shape ({m},{n}) trial {t}"
        try:
            baseline = hill_alpha(esd_of_matrix(matrix, context=ctx), cfg.hill,
                                  context=ctx)
            farms = farms_alpha_linear(matrix, cfg, context=ctx)
            return i, t, baseline, farms, None
        except FarmsError as exc:
            return i, t, None, None, str(exc)

    tasks = [(i, t) for i in range(len(shapes)) for t in range(trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, tasks))
    else:
        outcomes = [one(task) for task in tasks]

    per_shape = {i: {"baseline": [], "farms": []} for i in range(len(shapes))}
    errors = []
    for i, t, baseline, farms, err in outcomes:
        if err is not None:
            errors.append({"shape": list(shapes[i]), "trial": t, "error": err})
            continue
        per_shape[i]["baseline"].append(baseline)
        per_shape[i]["farms"].append(farms)

    rows = []
    means = {"baseline": [], "farms": []}
    for i, shape in enumerate(shapes):
        row = {"shape": list(shape), "trials": trials,
               "completed": len(per_shape[i]["baseline"])}
        for metric in ("baseline", "farms"):
            mean, std = _mean_std(per_shape[i][metric])
            row[metric] = {"mean": mean, "std": std}
            if mean is not None:
                means[metric].append(mean)
        rows.append(row)

    ranges = {}
    for metric in ("baseline", "farms"):
        vals = means[metric]
        ranges[metric] = float(max(vals) - min(vals)) if vals else None

    return BiasSweepResult(rows=tuple(rows), ranges=ranges,
                           errors=tuple(errors), seed=seed)


# ---------------------------------------------------------------------------
# Hill-estimator oracle


def hill_validation(true_alpha: float, n_samples: int, trials: int,
                    seed: int = 0, *, hill: HillConfig = HillConfig()):
    """Recover a known tail exponent from exact Pareto samples.

    Samples are drawn by inverse CDF: the survival function
    S(x) = x^-(alpha-1) on x >= 1 gives x = (1-u)^(-1/(alpha-1)).
    Returns (mean, population STD) of the per-trial estimates.
    """
    if not true_alpha > 1.0:
        raise ValueError("true_alpha must exceed 1")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    estimates = []
    for t in range(trials):
        u = _philox(seed, (t,)).random(n_samples)
        samples = (1.0 - u) ** (-1.0 / (true_alpha - 1.0))
        estimates.append(hill_alpha(ESD(samples), hill,
                                    context=f"trial {t}"))
    return float(np.mean(estimates)), float(np.std(estimates))


# ---------------------------------------------------------------------------
# Marchenko-Pastur comparison dump


def mp_comparison_data(m: int, n: int, trials: int, seed: int = 0, *,
                       bins: int = 50, curve_points: int = 200) -> dict:
    """Empirical-vs-theoretical spectrum data for external plotting.

    Draws unit-variance Gaussian matrices, computes the eigenvalues of
    (1/n) X X^T (structural zeros included when m > n), and returns a
    pooled histogram, sampled reference density, and per-trial KS
    statistics.
    """
    if m < 1 or n < 1:
        raise ValueError("matrix dimensions must be positive")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if bins < 1 or curve_points < 2:
        raise ValueError("bins must be >= 1 and curve_points >= 2")
    y = m / n
    lo, hi = mp_bulk_edges(y)
    ks_stats = []
    pooled = []
    for t in range(trials):
        matrix = gen_gaussian(GaussianSpec(m, n, "unit", _child_seed(seed, (t,))))
        esd = esd_of_matrix(matrix, context=f"trial {t}")
        ks_stats.append(ks_distance_to_mp(esd, y))
        values = esd.eigenvalues / n
        if m > n:
            values = np.concatenate((np.zeros(m - n), values))
        pooled.append(values)
    pooled = np.concatenate(pooled)

    upper = max(hi * 1.05, float(pooled.max()))
    density, edges = np.histogram(pooled, bins=bins, range=(0.0, upper),
                                  density=True)
    xs = np.linspace(max(lo, 0.0), hi, curve_points)
    curve = [mp_density(float(x), y)[0] for x in xs]
    return {
        "m": m,
        "n": n,
        "y": y,
        "trials": trials,
        "seed": seed,
        "bulk_edges": [lo, hi],
        "atom_mass": mp_atom_mass(y),
        "empirical_zero_fraction": float(np.mean(pooled == 0.0)),
        "ks": ks_stats,
        "histogram": {"edges": edges.tolist(), "density": density.tolist()},
        "curve": {"x": xs.tolist(), "density": curve},
    }


# ---------------------------------------------------------------------------
# Teacher-student alignment experiment


@dataclass(frozen=True)
class ToyExperimentConfig:
    """Single-index teacher recovery by a two-layer student.

    Only the first-layer matrix W (width x input_dim) trains; the output
    vector stays frozen at 1/sqrt(width).  The optimizer hyperparameters
    and the sampling protocol used at checkpoints were tuned so every
    width reaches alignment > 0.9 within the step budget; they are echoed
    into the result metadata.  ``sampler_window`` fixes one window size
    across all widths so checkpoint exponents are comparable between
    widths, and ``hill_k_fraction`` keeps the tail cut shallow enough to
    feel the single spike that training grows.
    """

    input_dim: int = 500
    widths: tuple = (250, 500, 1000, 2000)
    teacher_seed: int = 0
    activation: str = "relu"
    steps: int = 120
    batch_size: int = 128
    learning_rate: float = 0.25
    eval_stride: int = 10
    sampler_window: int = 250
    hill_k_fraction: float = 0.04

    def __post_init__(self):
        if not isinstance(self.input_dim, int) or self.input_dim < 2:
            raise ValueError("input_dim must be an integer >= 2")
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if not widths or min(widths) < 2:
            raise ValueError("widths must be non-empty with every width >= 2")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")
        if self.sampler_window < 2:
            raise ValueError("sampler_window must be >= 2")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "teacher_seed": self.teacher_seed,
            "activation": self.activation,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "eval_stride": self.eval_stride,
            "sampler_window": self.sampler_window,
            "hill_k_fraction": self.hill_k_fraction,
        }


@dataclass(frozen=True)
class AlignmentPoint:
    width: int
    step: int
    alignment: float
    baseline_alpha: float
    farms_alpha: float

    def to_dict(self) -> dict:
        return {"width": self.width, "step": self.step,
                "alignment": self.alignment,
                "baseline_alpha": self.baseline_alpha,
                "farms_alpha": self.farms_alpha}


@dataclass(frozen=True)
class AlignmentSeries:
    """Checkpoint trace plus the best-alignment row per width."""

    checkpoints: tuple
    best_by_width: tuple
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "checkpoints": [p.to_dict() for p in self.checkpoints],
            "best_by_width": [p.to_dict() for p in self.best_by_width],
        }


def toy_sampler_config(width: int, input_dim: int, *, window: int = 250,
                       k_fraction: float = 0.04) -> SubsampleConfig:
    """Fixed-window full-coverage plan for checkpoint exponents.

    A shared window size keeps the subsampled spectra of different widths
    on the same footing; letting the window track min(width, input_dim)
    would reintroduce a width-dependent offset in the exponents.
    """
    rows = math.ceil(max(width, input_dim) / window)
    cols = math.ceil(min(width, input_dim) / window)
    return SubsampleConfig(window=(window, window), steps=(rows, cols),
                           hill=HillConfig(k_fraction=k_fraction))


def _activation_pair(name):
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0),
                lambda z: (z > 0.0).astype(np.float64))
    return (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2)


def _train_one_width(cfg: ToyExperimentConfig, width: int, w_star):
    g, g_prime = _activation_pair(cfg.activation)
    d = cfg.input_dim
    seed = cfg.teacher_seed
    # independent streams per width: (width, 2) inits, (width, 1) feeds data
    W = _philox(seed, (width, 2)).standard_normal((width, d)) * math.sqrt(2.0 / d)
    out = np.full(width, 1.0 / math.sqrt(width))
    data = _philox(seed, (width, 1))
    sampler = toy_sampler_config(width, d, window=cfg.sampler_window,
                                 k_fraction=cfg.hill_k_fraction)
    hill = sampler.hill

    points = []
    best = None
    lr, batch = cfg.learning_rate, cfg.batch_size
    for step in range(cfg.steps + 1):
        if step % cfg.eval_stride == 0 or step == cfg.steps:
            v1 = np.linalg.svd(W, compute_uv=True)[2][0]
            alignment = min(abs(float(v1 @ w_star)), 1.0)
            ctx = f"width {width} step {step}"
            point = AlignmentPoint(
                width=width, step=step, alignment=alignment,
                baseline_alpha=hill_alpha(esd_of_matrix(W, context=ctx), hill,
                                          context=ctx),
                farms_alpha=farms_alpha_linear(W, sampler, context=ctx))
            points.append(point)
            if best is None or point.alignment > best.alignment:
                best = point
        if step == cfg.steps:
            break
        X = data.standard_normal((batch, d))
        y = g(X @ w_star)
        z = X @ W.T
        err = g(z) @ out - y
        if not np.isfinite(err).all():
            raise TrainingDivergedError(
                f"width {width}: loss diverged at step {step}")
        W -= lr * ((err[:, None] * g_prime(z) * out[None, :]).T @ X) / batch
    return points, best


def teacher_student_run(cfg: ToyExperimentConfig = ToyExperimentConfig()
                        ) -> AlignmentSeries:
    """Train one student per width and trace alignment against both alphas.

    The teacher produces y = g(<w*, x>) with a unit-norm direction w*
    drawn from the teacher seed.  Alignment at a checkpoint is the cosine
    between w* and the top right-singular direction of W.  The summary
    rows pick, per width, the checkpoint with the highest alignment.
    """
    w_star = _philox(cfg.teacher_seed).standard_normal(cfg.input_dim)
    w_star /= np.linalg.norm(w_star)
    checkpoints = []
    best_rows = []
    for width in cfg.widths:
        points, best = _train_one_width(cfg, width, w_star)
        checkpoints.extend(points)
        best_rows.append(best)
    return AlignmentSeries(checkpoints=tuple(checkpoints),
                           best_by_width=tuple(best_rows),
                           metadata=cfg.to_dict())


@dataclass(frozen=True)
class CorrelationSummary:
    """Pooled correlation between best-checkpoint alphas and alignment."""

    r_baseline: float
    r_farms: float
    method: str
    seeds: tuple
    n_points: int
    series: tuple

    def to_dict(self) -> dict:
        return {
            "r_baseline": self.r_baseline,
            "r_farms": self.r_farms,
            "method": self.method,
            "seeds": list(self.seeds),
            "n_points": self.n_points,
            "series": [s.to_dict() for s in self.series],
        }


def alignment_correlation(cfg: ToyExperimentConfig = ToyExperimentConfig(),
                          seeds=(0, 1, 2), *, spearman: bool = False
                          ) -> CorrelationSummary:
    """Run the width sweep for several seeds and pool the correlations.

    Each seed reruns the experiment end to end (teacher, init, and data
    all reseeded); the correlation is taken over all (width, seed)
    best-checkpoint rows.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("seeds must be non-empty")
    series = tuple(teacher_student_run(replace(cfg, teacher_seed=s))
                   for s in seeds)
    alignments, baseline, farms = [], [], []
    for one in series:
        for row in one.best_by_width:
            alignments.append(row.alignment)
            baseline.append(row.baseline_alpha)
            farms.append(row.farms_alpha)
    return CorrelationSummary(
        r_baseline=pearson_correlation(baseline, alignments, spearman=spearman),
        r_farms=pearson_correlation(farms, alignments, spearman=spearman),
        method="spearman" if spearman else "pearson",
        seeds=seeds,
        n_points=len(alignments),
        series=series,
    )


_TOY_KEYS = ("input_dim", "widths", "teacher_seed", "activation", "steps",
             "batch_size", "learning_rate", "eval_stride", "sampler_window",
             "hill_k_fraction")


def toy_config_from_dict(data, base: ToyExperimentConfig | None = None
                         ) -> ToyExperimentConfig:
    """Build a toy config from a JSON-shaped dict, layered over ``base``."""
    base = base if base is not None else ToyExperimentConfig()
    unknown = set(data) - set(_TOY_KEYS)
    if unknown:
        raise ValueError(f"unknown toy config keys: {sorted(unknown)}")
    fields = {key: data.get(key, getattr(base, key)) for key in _TOY_KEYS}
    fields["widths"] = tuple(fields["widths"])
    return ToyExperimentConfig(**fields)


# ---------------------------------------------------------------------------
# Correlation


def _average_ranks(values: np.ndarray) -> np.ndarray:
    # ties get the average of the positions they straddle
    ordered = np.sort(values)
    left = np.searchsorted(ordered, values, side="left")
    right = np.searchsorted(ordered, values, side="right")
    return (left + right + 1) / 2.0


def pearson_correlation(xs, ys, *, spearman: bool = False) -> float:
    """Pearson r, or Spearman's rho when ``spearman`` is set."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("inputs must be 1D sequences of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("inputs must be finite")
    if spearman:
        x = _average_ranks(x)
        y = _average_ranks(y)
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise ValueError("degenerate variance: correlation undefined")
    r = float(xc @ yc) / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))
