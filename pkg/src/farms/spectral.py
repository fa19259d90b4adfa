"""Empirical spectral densities, Hill tail-exponent estimation, and
Marchenko-Pastur reference quantities.

The spectrum of a weight matrix W is taken to be the eigenvalues of
W^T W, i.e. the squared singular values of W.  Tail exponents reported
here therefore describe the eigenvalue density; an exponent fitted on
singular values instead would relate to it by alpha_sv = 2 * alpha - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateSpectrumError, SpectrumError

__all__ = [
    "ESD",
    "HillConfig",
    "MPParams",
    "esd_of_matrix",
    "resolve_k",
    "hill_alpha",
    "mp_bulk_edges",
    "mp_atom_mass",
    "mp_density",
    "mp_cdf",
    "ks_distance_to_mp",
]

# Relative eigenvalue floor used by the Hill estimator when no absolute
# floor is configured: rank-deficient matrices produce eigenvalues that
# are zero up to SVD round-off, and those must never reach the log.
DEFAULT_EPS_RELATIVE = 1e-12

# Resolution of the quadrature grid behind mp_cdf.
_MP_CDF_POINTS = 8192


@dataclass(frozen=True)
class ESD:
    """Empirical spectral density of one or more (sub)matrices.

    Parameters
    ----------
    eigenvalues : ndarray
        Non-negative eigenvalues of W^T W, stored ascending as float64.
    source_count : int
        How many submatrices contributed eigenvalues.  1 for a plain
        matrix; the number of sampled windows for a pooled spectrum.
    """

    eigenvalues: np.ndarray
    source_count: int = 1

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise SpectrumError("eigenvalues must be a non-empty 1-D array")
        if not np.all(np.isfinite(vals)):
            raise SpectrumError("eigenvalues must be finite")
        if vals[0] < 0.0:
            raise SpectrumError("eigenvalues must be non-negative")
        if np.any(np.diff(vals) < 0.0):
            vals = np.sort(vals)
        if self.source_count < 1:
            raise SpectrumError("source_count must be >= 1")
        object.__setattr__(self, "eigenvalues", vals)

    def __len__(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])

    def scaled(self, factor: float) -> "ESD":
        """Spectrum of sqrt(factor) * W: every eigenvalue times factor."""
        if factor <= 0.0:
            raise SpectrumError("scale factor must be positive")
        return ESD(self.eigenvalues * factor, self.source_count)


def concatenate_esds(esds) -> ESD:
    """Pool several spectra into one, re-sorted ascending.

    Pooling eigenvalue multisets is the finite-sample equivalent of
    averaging the individual empirical densities when every input holds
    the same number of eigenvalues.
    """
    esds = list(esds)
    if not esds:
        raise SpectrumError("cannot concatenate zero spectra")
    vals = np.concatenate([e.eigenvalues for e in esds])
    count = sum(e.source_count for e in esds)
    return ESD(np.sort(vals), source_count=count)


@dataclass(frozen=True)
class HillConfig:
    """Settings for the Hill tail-exponent estimator.

    Exactly one of ``k_fraction`` / ``k_fixed`` decides how many of the
    largest eigenvalues enter the fit.  ``eps`` is an absolute floor below
    which eigenvalues are discarded first; when None, a relative floor of
    1e-12 times the largest eigenvalue is applied instead, which keeps the
    estimate invariant under rescaling of the matrix.
    """

    k_fraction: float | None = 0.5
    k_fixed: int | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.k_fixed is not None:
            if self.k_fixed < 1:
                raise ValueError("k_fixed must be >= 1")
        elif self.k_fraction is None:
            raise ValueError("set one of k_fraction or k_fixed")
        elif not 0.0 < self.k_fraction <= 1.0:
            raise ValueError("k_fraction must lie in (0, 1]")
        if self.eps is not None and self.eps <= 0.0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class MPParams:
    """Marchenko-Pastur reference parameters for aspect ratio y = m / n."""

    y: float
    bulk_lower: float
    bulk_upper: float
    atom_mass: float

    @classmethod
    def from_aspect(cls, y: float) -> "MPParams":
        lower, upper = mp_bulk_edges(y)
        return cls(y=y, bulk_lower=lower, bulk_upper=upper,
                   atom_mass=mp_atom_mass(y))


def esd_of_matrix(matrix, *, context: str = "") -> ESD:
    """Squared singular values of a real matrix, ascending.

    Equivalently the min(m, n) eigenvalues of W^T W (or W W^T) that are
    not structural zeros.  ``context`` is prepended to error messages so
    failures can name the layer they came from.
    """
    where = f"{context}: " if context else ""
    w = np.asarray(matrix, dtype=np.float64)
    if w.ndim != 2:
        raise SpectrumError(f"{where}expected a 2-D matrix, got ndim={w.ndim}")
    if w.shape[0] < 1 or w.shape[1] < 1:
        raise SpectrumError(f"{where}matrix has a zero dimension: {w.shape}")
    if not np.all(np.isfinite(w)):
        raise SpectrumError(f"{where}matrix contains non-finite entries")
    try:
        sv = np.linalg.svd(w, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"{where}SVD did not converge") from exc
    eig = np.sort(sv) ** 2
    # Round-off cannot make a squared value negative, but keep the
    # guarantee explicit for downstream consumers.
    np.maximum(eig, 0.0, out=eig)
    return ESD(eig, source_count=1)


def resolve_k(n_usable: int, config: HillConfig) -> int:
    """Tail size actually used for a spectrum with ``n_usable`` eigenvalues
    above the floor.  Always within [1, n_usable - 1] so the reference
    eigenvalue below the tail exists."""
    if n_usable < 2:
        raise DegenerateSpectrumError(
            f"need at least 2 usable eigenvalues, got {n_usable}")
    if config.k_fixed is not None:
        return min(config.k_fixed, n_usable - 1)
    k = math.floor(config.k_fraction * n_usable)
    return max(1, min(k, n_usable - 1))


def hill_alpha(esd: ESD, config: HillConfig = HillConfig(), *,
               context: str = "") -> float:
    """Hill estimate of the eigenvalue tail exponent.

    With ascending eigenvalues l_1 <= ... <= l_n and tail size k:

        alpha = 1 + k / sum_{i=1..k} ln(l_{n-i+1} / l_{n-k})

    Raises DegenerateSpectrumError when fewer than two eigenvalues survive
    the floor or when the top-k values all equal the reference (zero
    denominator).
    """
    where = f"{context}: " if context else ""
    vals = esd.eigenvalues
    eps = config.eps
    if eps is None:
        eps = DEFAULT_EPS_RELATIVE * float(vals[-1])
    usable = vals[vals > eps]
    n = usable.size
    if n < 2:
        raise DegenerateSpectrumError(
            f"{where}only {n} eigenvalue(s) above floor {eps:.3g}")
    k = resolve_k(n, config)
    tail = usable[n - k:]
    reference = usable[n - k - 1]
    log_sum = float(np.sum(np.log(tail / reference)))
    if log_sum <= 0.0:
        raise DegenerateSpectrumError(
            f"{where}flat tail: top {k} eigenvalues equal the reference")
    return 1.0 + k / log_sum


def mp_bulk_edges(y: float) -> tuple:
    """Support endpoints ((1 - sqrt(y))^2, (1 + sqrt(y))^2) of the
    continuous Marchenko-Pastur bulk."""
    if y <= 0.0:
        raise ValueError("aspect parameter y must be positive")
    root = math.sqrt(y)
    return ((1.0 - root) ** 2, (1.0 + root) ** 2)


def mp_atom_mass(y: float) -> float:
    """Point mass at zero: 1 - 1/y when y > 1, else 0."""
    if y <= 0.0:
        raise ValueError("aspect parameter y must be positive")
    return max(0.0, 1.0 - 1.0 / y)


def mp_density(x: float, y: float) -> tuple:
    """Continuous Marchenko-Pastur density at ``x`` plus the atom at zero.

    Returns ``(density, atom_mass)``.  The continuous part is

        sqrt((b - x)(x - a)) / (2 pi x y)   for a < x < b

    and zero outside the bulk; it integrates to 1 - atom_mass.
    """
    lower, upper = mp_bulk_edges(y)
    atom = mp_atom_mass(y)
    if x <= 0.0 or x <= lower or x >= upper:
        return 0.0, atom
    dens = math.sqrt((upper - x) * (x - lower)) / (2.0 * math.pi * x * y)
    return dens, atom


def _mp_cdf_table(y: float, points: int):
    """Tabulated CDF of the MP law on its bulk, by quadrature.

    The substitution x = a + (b - a) sin^2(t) absorbs the square-root
    edge singularities: the transformed integrand is smooth on [0, pi/2],
    so a trapezoid rule converges at second order.
    """
    lower, upper = mp_bulk_edges(y)
    atom = mp_atom_mass(y)
    t = np.linspace(0.0, math.pi / 2.0, points)
    sin_t = np.sin(t)
    cos_t = np.cos(t)
    x = lower + (upper - lower) * sin_t ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = ((upper - lower) ** 2 * (sin_t * cos_t) ** 2
                     / (math.pi * x * y))
    if x[0] == 0.0:
        # y == 1 puts the lower edge at zero; the substituted integrand
        # has the finite limit (b - a) cos^2(t) / pi there.
        integrand[0] = (upper - lower) / math.pi
    dt = t[1] - t[0]
    cum = np.concatenate((
        [0.0],
        np.cumsum(0.5 * (integrand[1:] + integrand[:-1])) * dt,
    ))
    return x, atom + cum


def mp_cdf(x, y: float, *, points: int = _MP_CDF_POINTS):
    """Marchenko-Pastur distribution function, vectorized over ``x``.

    Includes the atom at zero, so for y > 1 the value at x = 0 is
    1 - 1/y.  Accuracy is limited by the quadrature grid (errors around
    1e-8 at the default resolution).
    """
    grid_x, grid_cdf = _mp_cdf_table(y, points)
    xs = np.asarray(x, dtype=np.float64)
    out = np.interp(xs, grid_x, grid_cdf)
    out = np.where(xs < 0.0, 0.0, out)
    if np.isscalar(x) or xs.ndim == 0:
        return float(out)
    return out


def ks_distance_to_mp(esd: ESD, y: float, variance_scale: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance between a spectrum and the MP law.

    The spectrum must hold all min(m, n) SVD eigenvalues of an m x n
    matrix with m / n = y.  Eigenvalues are divided by
    ``variance_scale * n`` to match the (1/n) X X^T normalization of the
    reference law, and for y > 1 the m - n structural zeros that the SVD
    never reports are reinstated so the empirical distribution carries
    the correct point mass at zero.
    """
    if y <= 0.0:
        raise ValueError("aspect parameter y must be positive")
    if variance_scale <= 0.0:
        raise ValueError("variance_scale must be positive")
    count = len(esd)
    if y >= 1.0:
        n_cols = count
        total = int(round(y * count))
    else:
        n_cols = int(round(count / y))
        total = count
    values = esd.eigenvalues / (variance_scale * n_cols)
    zeros = total - count
    if zeros > 0:
        values = np.concatenate((np.zeros(zeros), values))
    n = values.size
    # Both distributions may jump at the same point (the reference law has
    # an atom at zero, the sample has the reinstated structural zeros), so
    # compare right- and left-limits at unique sample values rather than
    # using the tie-free textbook formula.
    uniq, counts = np.unique(values, return_counts=True)
    ecdf_right = np.cumsum(counts) / n
    ecdf_left = ecdf_right - counts / n
    ref_right = np.atleast_1d(mp_cdf(uniq, y))
    ref_left = ref_right.copy()
    ref_left[uniq == 0.0] -= mp_atom_mass(y)
    d = max(
        float(np.max(np.abs(ecdf_right - ref_right))),
        float(np.max(np.abs(ref_left - ecdf_left))),
    )
    return min(d, 1.0)
