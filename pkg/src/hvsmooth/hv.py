"""Sparse-factor filtering, smoothing, and scalable smoothing-draw sampling.

Instead of dense covariances, the filter carries pattern-constrained
Cholesky factors: the forecast covariance is approximated by
``L_pred L_pred^T`` with ``L_pred`` from :func:`hvsmooth.sparselin.hcf`, and
the filtering factor comes from the order-reversed update in
:func:`hvsmooth.sparselin.filter_update_factor`.  With the dense pattern the
recursions coincide with the exact algorithms in :mod:`hvsmooth.exact`.

The factor sequence depends on the model only, never on the data, so it is
built once (:func:`hv_factor_pass`) and shared read-only across smoother
calls and sampler draws; mean recursions are cheap per-sample work on
vectors and sparse operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import StateSpaceModel, as_generator
from .ordering import SparsityPattern
from .sparselin import (
    FactorizationError,
    SparseLowerTriangular,
    filter_update_factor,
    hcf,
    selected_gram,
    values_on_pattern,
)


@dataclass
class HvFactors:
    """Data-independent factor sequence of a model under one pattern."""

    pattern: SparsityPattern
    L_init: SparseLowerTriangular
    L_noise: object  # single factor, per-time list, or None until needed
    L_pred: list  # index t = 1..T; slot 0 unused
    L_filt: list  # index t = 0..T; slot 0 is the initial factor

    def noise_factor(self, t: int) -> SparseLowerTriangular:
        if self.L_noise is None:
            raise ValueError("factor pass was built without the noise factor")
        return self.L_noise[t - 1] if isinstance(self.L_noise, list) else self.L_noise

    @property
    def nbytes(self) -> int:
        total = self.L_init.values.nbytes
        factors = self.L_pred[1:] + self.L_filt
        if isinstance(self.L_noise, list):
            factors = factors + self.L_noise
        elif self.L_noise is not None:
            factors = factors + [self.L_noise]
        return total + sum(f.values.nbytes for f in factors)


@dataclass
class FilterState:
    """Forecast/filtering means and factors, indexed by t (0..T)."""

    pattern: SparsityPattern
    mu_pred: list
    mu_filt: list
    L_pred: list
    L_filt: list


def hv_factor_pass(
    m: StateSpaceModel,
    S: SparsityPattern,
    init_factor: Optional[SparseLowerTriangular] = None,
    q_factor=None,
    q_pattern_values: Optional[np.ndarray] = None,
    jitter: float = 0.0,
    need_noise_factor: bool = False,
) -> HvFactors:
    """Run the factor recursions once for a model and pattern.

    Per time step: evaluate the forecast covariance
    ``E L L^T E^T + Q`` at pattern positions only, factor it under the
    pattern, and turn the forecast factor into the filtering factor.
    ``init_factor`` / ``q_factor`` allow reusing prefactored initial and
    model-noise covariances (they do not change along a Gibbs chain, for
    instance); ``q_pattern_values`` similarly short-circuits the kernel
    evaluation of Q at pattern positions when the caller has them.

    The model-noise factor is only required for simulating synthetic
    trajectories (``need_noise_factor``); filtering and smoothing read Q
    solely through its pattern entries.
    """
    if S.n != m.n:
        raise ValueError("pattern and model dimensions disagree")
    if init_factor is None:
        init_factor = hcf(S, m.initial_cov, jitter=jitter, time_index=0)
    if q_factor is None and need_noise_factor:
        if m.q_time_invariant:
            q_factor = hcf(S, m.Q_at(1), jitter=jitter)
        else:
            q_factor = [hcf(S, m.Q_at(t), jitter=jitter, time_index=t) for t in range(1, m.T + 1)]

    if q_pattern_values is None and m.q_time_invariant:
        q_pattern_values = values_on_pattern(S, m.Q_at(1))

    L_pred: list = [None]
    L_filt = [init_factor]
    for t in range(1, m.T + 1):
        qv = (
            q_pattern_values
            if q_pattern_values is not None
            else values_on_pattern(S, m.Q_at(t))
        )
        try:
            fc = selected_gram(m.E_at(t), L_filt[t - 1], qv, S)
            L_pred.append(hcf(S, fc, jitter=jitter, time_index=t))
            rinv = 1.0 / np.asarray(m.R_at(t), dtype=np.float64)
            L_filt.append(
                filter_update_factor(L_pred[t], m.H_at(t), rinv, time_index=t)
            )
        except FactorizationError as exc:
            if exc.time_index is None:
                exc.time_index = t
            raise
    return HvFactors(S, init_factor, q_factor, L_pred, L_filt)


def _filter_means(factors: HvFactors, m: StateSpaceModel, y: list):
    mu_pred: list = [None]
    mu_filt = [np.asarray(m.initial_mean, dtype=np.float64)]
    for t in range(1, m.T + 1):
        mp = m.E_at(t) @ mu_filt[t - 1]
        obs = m.H_at(t)
        if obs.size == 0:
            mf = mp
        else:
            rinv = 1.0 / np.broadcast_to(np.asarray(m.R_at(t), dtype=np.float64), obs.shape)
            u = np.zeros(m.n)
            u[obs] = rinv * (y[t - 1] - mp[obs])
            Lf = factors.L_filt[t]
            mf = mp + Lf.matvec(Lf.rmatvec(u))
        mu_pred.append(mp)
        mu_filt.append(mf)
    return mu_pred, mu_filt


def _smoother_means(factors: HvFactors, m: StateSpaceModel, mu_pred, mu_filt):
    """Backward mean recursion, strictly as matrix-vector products."""
    out = np.empty((m.T, m.n))
    out[m.T - 1] = mu_filt[m.T]
    for t in range(m.T - 1, 0, -1):
        v = out[t] - mu_pred[t + 1]
        Lp = factors.L_pred[t + 1]
        z = Lp.solve(Lp.solve(v), transposed=True)
        a = m.E_at(t + 1).T @ z
        Lf = factors.L_filt[t]
        out[t - 1] = mu_filt[t] + Lf.matvec(Lf.rmatvec(a))
    return out


def hvf(
    m: StateSpaceModel,
    y: list,
    S: SparsityPattern,
    factors: Optional[HvFactors] = None,
    jitter: float = 0.0,
) -> FilterState:
    """Sparse-factor filter: forecast/filtering means and factors."""
    _check_obs(m, y)
    if factors is None:
        factors = hv_factor_pass(m, S, jitter=jitter)
    mu_pred, mu_filt = _filter_means(factors, m, y)
    return FilterState(S, mu_pred, mu_filt, factors.L_pred, factors.L_filt)


def hvs(
    m: StateSpaceModel,
    y: list,
    S: SparsityPattern,
    factors: Optional[HvFactors] = None,
    jitter: float = 0.0,
) -> np.ndarray:
    """Sparse-factor smoothing means, shape ``(T, n)`` for t = 1..T."""
    _check_obs(m, y)
    if factors is None:
        factors = hv_factor_pass(m, S, jitter=jitter)
    mu_pred, mu_filt = _filter_means(factors, m, y)
    return _smoother_means(factors, m, mu_pred, mu_filt)


def scalable_ffbs(
    m: StateSpaceModel,
    y: list,
    S: SparsityPattern,
    n_samples: int,
    rng,
    factors: Optional[HvFactors] = None,
    init_factor: Optional[SparseLowerTriangular] = None,
    q_factor=None,
    q_pattern_values: Optional[np.ndarray] = None,
    jitter: float = 0.0,
) -> np.ndarray:
    """Approximate draws from the joint smoothing distribution.

    The simulation-smoothing construction of :func:`hvsmooth.exact.ffbs`
    with every dense covariance operation replaced by pattern-constrained
    factors: synthetic noise comes from factor matvecs, and the correction
    pass is the sparse-factor smoother.  With the dense pattern this is the
    exact sampler; with the low-rank pattern it is the low-rank baseline -
    same code path, different pattern.

    Returns an array of shape ``(n_samples, T, n)``.
    """
    _check_obs(m, y)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = as_generator(rng)
    if factors is None:
        factors = hv_factor_pass(
            m,
            S,
            init_factor=init_factor,
            q_factor=q_factor,
            q_pattern_values=q_pattern_values,
            jitter=jitter,
            need_noise_factor=True,
        )
    elif factors.L_noise is None:
        if m.q_time_invariant:
            factors.L_noise = hcf(S, m.Q_at(1), jitter=jitter)
        else:
            factors.L_noise = [
                hcf(S, m.Q_at(t), jitter=jitter, time_index=t)
                for t in range(1, m.T + 1)
            ]
    n, T = m.n, m.T
    out = np.empty((n_samples, T, n))
    for s, rng_s in enumerate(rng.spawn(n_samples)):
        xs = np.empty((T + 1, n))
        xs[0] = factors.L_init.matvec(rng_s.standard_normal(n))
        ystar = []
        for t in range(1, T + 1):
            w = factors.noise_factor(t).matvec(rng_s.standard_normal(n))
            xs[t] = m.E_at(t) @ xs[t - 1] + w
            obs = m.H_at(t)
            noise = np.sqrt(
                np.broadcast_to(m.R_at(t), obs.shape)
            ) * rng_s.standard_normal(obs.shape[0])
            ystar.append(y[t - 1] - (xs[t][obs] + noise))
        mu_pred, mu_filt = _filter_means(factors, m, ystar)
        mu_smooth = _smoother_means(factors, m, mu_pred, mu_filt)
        out[s] = xs[1:] + mu_smooth
    return out


def _check_obs(m: StateSpaceModel, y: list) -> None:
    if len(y) != m.T:
        raise ValueError(f"expected {m.T} observation vectors, got {len(y)}")
    for t in range(1, m.T + 1):
        if np.asarray(y[t - 1]).shape[0] != m.H_at(t).shape[0]:
            raise ValueError(f"observation vector at t={t} does not match selector")
