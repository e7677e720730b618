"""
HOS decomposition by deflation.

Each pass aligns the current residual, recovers a waveform, thresholds the
detection filter output, reconstructs the component, fits its scale and
subtracts it.  Passes stop when the filtered residual no longer carries
significant skewness, when a pass fails to converge, or at
``max_components``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .delay import AlignmentResult, DelayEstimates, DelayFilter, IterConfig, _records, filter_outputs, iterate_alignment
from .errors import InvalidInputError, UndefinedStatisticError
from .hos import RecordEnsemble
from .reconstruction import (fit_scale, reconstruct_component, recover_waveform, select_threshold,
                             skewness_bound)

log = logging.getLogger(__name__)

STOP_STATISTICAL = "statistical"
STOP_MAX_COMPONENTS = "max_components"
STOP_NON_CONVERGENCE = "non_convergence"


@dataclass
class DecompositionConfig:
    max_components: int = 8
    false_positive_rate: float = 0.05
    iteration: IterConfig = field(default_factory=IterConfig)

    @property
    def order(self) -> int:
        return self.iteration.order

    def __post_init__(self):
        if self.max_components < 1:
            raise InvalidInputError("max_components must be >= 1")
        if not 0 < self.false_positive_rate < 0.5:
            raise InvalidInputError("false_positive_rate must lie in (0, 0.5)")


@dataclass
class Component:
    waveform: np.ndarray
    filter: DelayFilter
    threshold: float
    scale: float
    delays: DelayEstimates
    index: int
    reconstruction: np.ndarray = field(repr=False)
    changed_counts: list[int] = field(default_factory=list)
    stop_statistic: float = float("nan")
    threshold_flagged: bool = False


@dataclass
class DecompositionResult:
    components: list[Component]
    residual: RecordEnsemble
    stop_reason: str
    # cross-fitted residual statistic of every candidate, accepted or not
    candidate_statistics: list[float] = field(default_factory=list)

    def reconstruction(self) -> np.ndarray:
        total = np.zeros_like(self.residual.records)
        for c in self.components:
            total += c.reconstruction
        return total


def _statistic(r: np.ndarray, order: int) -> float:
    r = r - r.mean(axis=1, keepdims=True)
    m2 = np.mean(r**2, axis=1)
    live = m2 > 1e-30 * max(1.0, float(np.max(np.abs(r))) ** 2)
    if not np.any(live):
        raise UndefinedStatisticError("filtered residual is identically zero")
    stat = np.zeros(r.shape[0])
    if order % 2:
        stat[live] = np.mean(r[live] ** 3, axis=1) / m2[live] ** 1.5
    else:
        stat[live] = np.mean(r[live] ** 4, axis=1) / m2[live] ** 2 - 3.0
    return float(np.mean(stat))


def mean_record_statistic(ensemble, candidate, order: int = 3) -> float:
    """Average over records of the skewness (excess kurtosis for even order)
    of the records filtered by ``candidate`` (a :class:`DelayFilter` or an
    :class:`AlignmentResult`).  Zero-variance records contribute 0."""
    rec = _records(ensemble)
    g = candidate.filter if isinstance(candidate, AlignmentResult) else candidate
    if rec.shape[1] != g.T:
        rec = np.concatenate([rec, np.zeros((rec.shape[0], g.T - rec.shape[1]))], axis=1)
    return _statistic(filter_outputs(g, np.fft.fft(rec, axis=1)), order)


def cross_fitted_statistic(ensemble, iteration: IterConfig | None = None) -> float:
    """:func:`mean_record_statistic` with the filter for each half of the
    records fitted on the other half (even and odd record indices).

    A filter fitted to the same records it is applied to rewards each
    record for its own contribution, so the plain statistic sits well above
    zero even for pure noise.  Fitted on independent records the filter is a
    fixed linear operator and Gaussian noise leaves zero skewness on
    average.  With fewer than 4 records the plain statistic is returned.
    """
    cfg = iteration or IterConfig()
    rec = _records(ensemble)
    L = rec.shape[0]
    if L < 4:
        return mean_record_statistic(rec, iterate_alignment(rec, cfg), cfg.order)
    halves = (rec[0::2], rec[1::2])
    stats = []
    for fit, test in (halves, halves[::-1]):
        g = iterate_alignment(fit, cfg).filter
        stats.append(mean_record_statistic(test, g, cfg.order) * test.shape[0])
    return float(sum(stats) / L)


def residual_stop_check(ensemble, candidate_filter: DelayFilter | None = None,
                        false_positive_rate: float = 0.05, order: int = 3,
                        iteration: IterConfig | None = None) -> bool:
    """True when the record-averaged skewness of the filtered residual is
    below ``Phi^-1(1-FP) sqrt(6/T)``, i.e. there is nothing left to extract.

    With ``candidate_filter`` the residual is filtered by it as given.
    Without one the filters are fitted by cross-fitting under ``iteration``
    (see :func:`cross_fitted_statistic`), which is what the deflation loop
    uses.
    """
    rec = _records(ensemble)
    if iteration is None:
        iteration = IterConfig(order=order)
    try:
        if candidate_filter is None:
            stat = cross_fitted_statistic(rec, iteration)
        else:
            stat = mean_record_statistic(rec, candidate_filter, iteration.order)
    except UndefinedStatisticError:
        return True
    return stat < skewness_bound(rec.shape[1], false_positive_rate, iteration.order)


def _extract(residual: np.ndarray, align: AlignmentResult, cfg: DecompositionConfig, index: int):
    order = cfg.order
    T = residual.shape[1]
    padded = align.filter.T != T
    work = np.concatenate([residual, np.zeros_like(residual)], axis=1) if padded else residual
    g = align.filter
    waveform = recover_waveform(work, align.delays)
    r = filter_outputs(g, np.fft.fft(work, axis=1))
    choice = select_threshold(r[:, :T].ravel(), cfg.false_positive_rate, order)
    y = reconstruct_component(waveform, g, work, choice.theta, order)[:, :T]
    a = fit_scale(residual, y)
    return waveform, choice, a * y, a


def hosd_decompose(ensemble, config: DecompositionConfig | None = None) -> DecompositionResult:
    """Run the deflation loop and return the components and final residual."""
    cfg = config or DecompositionConfig()
    rec = _records(ensemble)
    residual = rec.copy()
    components: list[Component] = []
    stats: list[float] = []
    reason = STOP_MAX_COMPONENTS
    for p in range(cfg.max_components):
        try:
            stat = cross_fitted_statistic(residual, cfg.iteration)
        except UndefinedStatisticError:
            stat = -math.inf
        stats.append(stat)
        if stat < skewness_bound(residual.shape[1], cfg.false_positive_rate, cfg.order):
            reason = STOP_STATISTICAL
            break
        align = iterate_alignment(residual, cfg.iteration)
        if not align.converged:
            log.info("component %d: alignment did not converge in %d iterations", p, align.iterations)
            reason = STOP_NON_CONVERGENCE
            break
        waveform, choice, y, a = _extract(residual, align, cfg, p)
        if a == 0 or not np.any(y):
            reason = STOP_STATISTICAL
            break
        residual = residual - y
        components.append(Component(waveform, align.filter, choice.theta, a, align.delays, p, y,
                                    list(align.changed_counts), stat, choice.flagged))
    else:
        reason = STOP_MAX_COMPONENTS
    src = ensemble if isinstance(ensemble, RecordEnsemble) else None
    resid = RecordEnsemble(residual, sample_rate=src.sample_rate if src else 1.0,
                           taper=src.taper if src else "none")
    return DecompositionResult(components, resid, reason, stats)
