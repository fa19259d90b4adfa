"""Scikit-learn style facade over the analyzer and allocators.

These wrappers exist so the package plays well with sklearn tooling
(``get_params``/``set_params``, ``clone``, pipelines).  All real work
happens in :mod:`farms.sampler` and :mod:`farms.allocators`; the classes
here only translate flat constructor parameters into the config
dataclasses, so they follow the sklearn convention of validating in
``fit`` rather than ``__init__``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .allocators import (
    LRScheduleConfig,
    LSConfig,
    SparsityConfig,
    assign_learning_rates,
    assign_sparsities,
)
from .exceptions import FarmsError
from .sampler import SubsampleConfig, _error_report, analyze_layer, summarize_reports
from .spectral import HillConfig
from .tensorio import LayerEntry, WeightTensor

__all__ = ["FarmsAnalyzer", "LearningRateAllocator", "SparsityAllocator"]


def _as_weight_tensor(item, index: int) -> WeightTensor:
    """Coerce an input layer to a WeightTensor.

    Accepts WeightTensor, ``(name, array)`` pairs, or bare 2D/4D arrays
    (named ``layer_<index>`` by position).
    """
    if isinstance(item, WeightTensor):
        return item
    if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], str):
        name, array = item
    else:
        name, array = f"layer_{index}", item
    array = np.ascontiguousarray(array, dtype=np.float64)
    if array.ndim not in (2, 4):
        raise ValueError(f"layer {name!r} must be 2D or 4D, got {array.ndim}D")
    kind = "linear" if array.ndim == 2 else "conv2d"
    entry = LayerEntry(
        name=name,
        kind=kind,
        shape=tuple(int(s) for s in array.shape),
        dtype="f64",
        blob="in-memory.bin",
    )
    return WeightTensor(entry, array)


class FarmsAnalyzer(TransformerMixin, BaseEstimator):
    """Per-layer tail-exponent analyzer with aspect-ratio-fixed subsampling.

    ``fit`` analyzes the given layers and stores ``reports_`` plus a
    ``summary_`` dict; ``transform`` maps layers to a ``(n_layers, 2)``
    float array of ``[baseline_alpha, farms_alpha]`` with NaN rows for
    layers whose spectrum analysis failed.

    Parameters mirror SubsampleConfig and HillConfig flattened to scalars
    so the estimator stays clonable.
    """

    def __init__(self, q_ratio=1.0, window=None, steps=None,
                 conv_aggregation="average_per_block", k_fraction=0.5,
                 k_fixed=None, eps=None, clamp_window=True):
        self.q_ratio = q_ratio
        self.window = window
        self.steps = steps
        self.conv_aggregation = conv_aggregation
        self.k_fraction = k_fraction
        self.k_fixed = k_fixed
        self.eps = eps
        self.clamp_window = clamp_window

    def _config(self) -> SubsampleConfig:
        hill = HillConfig(k_fraction=self.k_fraction, k_fixed=self.k_fixed,
                          eps=self.eps)
        return SubsampleConfig(q_ratio=self.q_ratio, window=self.window,
                               steps=self.steps,
                               conv_aggregation=self.conv_aggregation,
                               hill=hill, clamp_window=self.clamp_window)

    def fit(self, X, y=None):
        cfg = self._config()
        reports = []
        for i, item in enumerate(X):
            tensor = _as_weight_tensor(item, i)
            try:
                reports.append(analyze_layer(tensor, cfg))
            except FarmsError as exc:
                # continue-and-collect, same policy as analyze_model
                reports.append(_error_report(tensor.entry, exc))
        self.reports_ = reports
        self.summary_ = summarize_reports(reports)
        self.n_layers_ = len(reports)
        return self

    def transform(self, X):
        check_is_fitted(self)
        cfg = self._config()
        rows = []
        for i, item in enumerate(X):
            tensor = _as_weight_tensor(item, i)
            try:
                rep = analyze_layer(tensor, cfg)
                rows.append((rep.baseline_alpha, rep.farms_alpha))
            except FarmsError:
                rows.append((np.nan, np.nan))
        return np.asarray(rows, dtype=np.float64).reshape(len(rows), 2)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(["alpha_baseline", "alpha_farms"], dtype=object)


class LearningRateAllocator(BaseEstimator):
    """Maps per-layer tail exponents to per-layer learning rates.

    ``X`` is a sequence of LayerReport objects, e.g. ``FarmsAnalyzer.reports_``
    or the layers of an ``analyze_model`` report.  ``predict`` returns one
    rate per layer in input order; layers dropped by the selection heuristic
    get exactly ``eta_t``.
    """

    def __init__(self, eta_t=1e-3, s1=0.5, s2=1.5, mapping="linear_minmax",
                 temperature=1.0, layer_selection=True, exclude_first_last=True,
                 min_esd_size=32, max_aspect_ratio=5.0, metric="farms"):
        self.eta_t = eta_t
        self.s1 = s1
        self.s2 = s2
        self.mapping = mapping
        self.temperature = temperature
        self.layer_selection = layer_selection
        self.exclude_first_last = exclude_first_last
        self.min_esd_size = min_esd_size
        self.max_aspect_ratio = max_aspect_ratio
        self.metric = metric

    def _config(self) -> LRScheduleConfig:
        ls = None
        if self.layer_selection:
            ls = LSConfig(exclude_first_last=self.exclude_first_last,
                          min_esd_size=self.min_esd_size,
                          max_aspect_ratio=self.max_aspect_ratio)
        return LRScheduleConfig(eta_t=self.eta_t, s1=self.s1, s2=self.s2,
                                mapping=self.mapping,
                                temperature=self.temperature,
                                layer_selection=ls)

    def fit(self, X, y=None):
        self.result_ = assign_learning_rates(list(X), self._config(),
                                             metric=self.metric)
        self.rates_ = np.asarray([e.value for e in self.result_.per_layer])
        return self

    def predict(self, X):
        check_is_fitted(self)
        result = assign_learning_rates(list(X), self._config(),
                                       metric=self.metric)
        return np.asarray([e.value for e in result.per_layer])


class SparsityAllocator(BaseEstimator):
    """Maps per-layer tail exponents to pruning ratios under a global budget.

    The parameter-weighted mean of the returned ratios matches ``target``;
    see ``assign_sparsities`` for the redistribution rules.
    """

    def __init__(self, target=0.5, tau=0.1, weight_by_params=True,
                 clamp_lo=0.0, clamp_hi=0.99, metric="farms"):
        self.target = target
        self.tau = tau
        self.weight_by_params = weight_by_params
        self.clamp_lo = clamp_lo
        self.clamp_hi = clamp_hi
        self.metric = metric

    def _config(self) -> SparsityConfig:
        return SparsityConfig(target=self.target, tau=self.tau,
                              weight_by_params=self.weight_by_params,
                              clamp=(self.clamp_lo, self.clamp_hi))

    def fit(self, X, y=None):
        self.result_ = assign_sparsities(list(X), self._config(),
                                         metric=self.metric)
        self.sparsities_ = np.asarray([e.value for e in self.result_.per_layer])
        return self

    def predict(self, X):
        check_is_fitted(self)
        result = assign_sparsities(list(X), self._config(), metric=self.metric)
        return np.asarray([e.value for e in result.per_layer])
