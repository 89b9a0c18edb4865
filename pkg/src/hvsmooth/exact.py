"""Exact dense filtering, smoothing, and smoothing-distribution sampling.

These are the reference algorithms: the Kalman filter, the fixed-interval
(Rauch-Tung-Striebel) smoother, and the simulation smoother that draws joint
trajectories from the smoothing distribution by simulating synthetic data
and correcting it with a smoother pass.  They serve as oracles for the
sparse-factor implementations and as the dense baseline method.

Covariances, gains, and smoother weights do not depend on the data, so they
are computed once per model and shared across samples; only the mean
recursions are per-sample work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .models import StateSpaceModel, _chol_or_zero, _draw, as_generator
from .sparselin import FactorizationError


@dataclass
class MomentSequence:
    """Per-time moments, indexed by t in 0..T (predictive slots start at 1)."""

    mu_pred: list = field(default_factory=list)
    cov_pred: list = field(default_factory=list)
    mu_filt: list = field(default_factory=list)
    cov_filt: list = field(default_factory=list)
    mu_smooth: Optional[list] = None
    cov_smooth: Optional[list] = None


@dataclass
class _GainPass:
    """Data-independent part of the filter/smoother recursions."""

    cov_pred: list
    cov_filt: list
    gains: list  # K_t, shape (n, n_t)
    smoother_gains: list  # J_t for t = 1..T-1 (slot t), None elsewhere


def _gain_pass(m: StateSpaceModel, with_smoother: bool = False) -> _GainPass:
    n = m.n
    cov_pred: list = [None]
    cov_filt = [np.asarray(m.initial_cov.dense(), dtype=np.float64)]
    gains: list = [None]
    for t in range(1, m.T + 1):
        E = m.E_at(t)
        Sp = E @ cov_filt[t - 1] @ E.T + np.asarray(m.Q_at(t).dense())
        Sp = 0.5 * (Sp + Sp.T)
        obs = m.H_at(t)
        if obs.size == 0:
            K = np.zeros((n, 0))
            Sf = Sp
        else:
            r = np.broadcast_to(np.asarray(m.R_at(t), dtype=np.float64), obs.shape)
            innov_cov = Sp[np.ix_(obs, obs)].copy()
            innov_cov[np.diag_indices_from(innov_cov)] += r
            try:
                cf = sla.cho_factor(innov_cov, lower=True)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - R > 0
                raise FactorizationError(
                    f"singular innovation covariance at t={t}", time_index=t
                ) from exc
            K = sla.cho_solve(cf, Sp[obs, :]).T
            Sf = Sp - K @ Sp[obs, :]
            Sf = 0.5 * (Sf + Sf.T)
        cov_pred.append(Sp)
        cov_filt.append(Sf)
        gains.append(K)

    smoother_gains: list = [None] * (m.T + 1)
    if with_smoother:
        for t in range(m.T - 1, 0, -1):
            E = m.E_at(t + 1)
            numerator = E @ cov_filt[t]
            if not numerator.any():  # degenerate (zero-covariance) chain
                smoother_gains[t] = np.zeros((n, n))
                continue
            try:
                cf = sla.cho_factor(cov_pred[t + 1], lower=True)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(
                    f"singular forecast covariance at t={t + 1}", time_index=t + 1
                ) from exc
            # J_t = cov_filt[t] E^T cov_pred[t+1]^{-1}
            smoother_gains[t] = sla.cho_solve(cf, numerator).T
    return _GainPass(cov_pred, cov_filt, gains, smoother_gains)


def _mean_filter(gp: _GainPass, m: StateSpaceModel, y: list):
    mu_pred: list = [None]
    mu_filt = [np.asarray(m.initial_mean, dtype=np.float64)]
    for t in range(1, m.T + 1):
        mp = m.E_at(t) @ mu_filt[t - 1]
        obs = m.H_at(t)
        if obs.size == 0:
            mf = mp
        else:
            mf = mp + gp.gains[t] @ (y[t - 1] - mp[obs])
        mu_pred.append(mp)
        mu_filt.append(mf)
    return mu_pred, mu_filt


def _mean_smoother(gp: _GainPass, m: StateSpaceModel, mu_pred, mu_filt):
    mu_smooth: list = [None] * (m.T + 1)
    mu_smooth[m.T] = mu_filt[m.T]
    for t in range(m.T - 1, 0, -1):
        mu_smooth[t] = mu_filt[t] + gp.smoother_gains[t] @ (
            mu_smooth[t + 1] - mu_pred[t + 1]
        )
    return mu_smooth


def kalman_filter(m: StateSpaceModel, y: list) -> MomentSequence:
    """Exact forecast and filtering moments.

    Time points with no observations are first class: the update is the
    identity and filtering moments equal forecast moments.
    """
    _check_obs(m, y)
    gp = _gain_pass(m)
    mu_pred, mu_filt = _mean_filter(gp, m, y)
    return MomentSequence(mu_pred, gp.cov_pred, mu_filt, gp.cov_filt)


def kalman_smoother(
    m: StateSpaceModel, y: list, with_covariance: bool = False
) -> MomentSequence:
    """Filtering moments plus the backward smoothing-mean recursion.

    Smoothing covariances are skipped unless ``with_covariance`` is set;
    they are only needed by diagnostics, not by the sampler.
    """
    _check_obs(m, y)
    gp = _gain_pass(m, with_smoother=True)
    mu_pred, mu_filt = _mean_filter(gp, m, y)
    ms = MomentSequence(mu_pred, gp.cov_pred, mu_filt, gp.cov_filt)
    ms.mu_smooth = _mean_smoother(gp, m, mu_pred, mu_filt)
    if with_covariance:
        cov_smooth: list = [None] * (m.T + 1)
        cov_smooth[m.T] = gp.cov_filt[m.T]
        for t in range(m.T - 1, 0, -1):
            J = gp.smoother_gains[t]
            cov_smooth[t] = gp.cov_filt[t] + J @ (
                cov_smooth[t + 1] - gp.cov_pred[t + 1]
            ) @ J.T
        ms.cov_smooth = cov_smooth
    return ms


def ffbs(m: StateSpaceModel, y: list, n_samples: int, rng) -> np.ndarray:
    """Exact draws from the joint smoothing distribution.

    Per sample: simulate a zero-mean synthetic trajectory and synthetic
    data from the model equations, subtract the synthetic data from the
    real data, run the smoother on the difference, and add the resulting
    smoothing means back onto the synthetic states.

    Each sample index owns an independent RNG substream, so the result is
    reproducible bit-for-bit regardless of evaluation order.

    Returns an array of shape ``(n_samples, T, n)``.
    """
    _check_obs(m, y)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = as_generator(rng)
    n, T = m.n, m.T
    gp = _gain_pass(m, with_smoother=True)
    chol0 = _chol_or_zero(np.asarray(m.initial_cov.dense()))
    chol_q = None
    if m.q_time_invariant:
        chol_q = _chol_or_zero(np.asarray(m.Q_at(1).dense()))

    out = np.empty((n_samples, T, n))
    for s, rng_s in enumerate(rng.spawn(n_samples)):
        xhat = _draw(chol0, rng_s.standard_normal(n))
        ystar = []
        xs = np.empty((T + 1, n))
        xs[0] = xhat
        for t in range(1, T + 1):
            eps = rng_s.standard_normal(n)
            if chol_q is not None or m.q_time_invariant:
                w = _draw(chol_q, eps)
            else:
                w = _draw(_chol_or_zero(np.asarray(m.Q_at(t).dense())), eps)
            xs[t] = m.E_at(t) @ xs[t - 1] + w
            obs = m.H_at(t)
            noise = np.sqrt(
                np.broadcast_to(m.R_at(t), obs.shape)
            ) * rng_s.standard_normal(obs.shape[0])
            ystar.append(y[t - 1] - (xs[t][obs] + noise))
        mu_pred, mu_filt = _mean_filter(gp, m, ystar)
        mu_smooth = _mean_smoother(gp, m, mu_pred, mu_filt)
        for t in range(1, T + 1):
            out[s, t - 1] = xs[t] + mu_smooth[t]
    return out


def _check_obs(m: StateSpaceModel, y: list) -> None:
    if len(y) != m.T:
        raise ValueError(f"expected {m.T} observation vectors, got {len(y)}")
    for t in range(1, m.T + 1):
        if np.asarray(y[t - 1]).shape[0] != m.H_at(t).shape[0]:
            raise ValueError(f"observation vector at t={t} does not match selector")
