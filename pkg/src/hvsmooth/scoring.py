"""Ensemble scoring and the conjugate Gibbs sampler for the model-error
variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import pdist

from .hv import scalable_ffbs
from .models import ScaledCovariance, StateSpaceModel, as_generator
from .ordering import SparsityPattern
from .sparselin import SparseLowerTriangular, hcf, values_on_pattern


def crps(members: np.ndarray, target: np.ndarray) -> float:
    """Continuous ranked probability score of an ensemble (energy form).

    ``mean_i ||q_i - q|| - (1 / 2 N^2) sum_ij ||q_i - q_j||`` with the
    Euclidean norm; lower is better.
    """
    members = np.atleast_2d(np.asarray(members, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).ravel()
    if members.shape[1] != target.shape[0]:
        raise ValueError("ensemble members and target have different dimensions")
    nsamp = members.shape[0]
    term1 = np.mean(np.linalg.norm(members - target, axis=1))
    if nsamp == 1:
        return float(term1)
    term2 = np.sum(pdist(members)) / nsamp**2  # pdist covers each pair once
    return float(term1 - term2)


def crps_ratio(scores, reference_scores, percent: bool = False) -> np.ndarray:
    """Elementwise score ratio against a reference method."""
    scores = np.asarray(scores, dtype=np.float64)
    ref = np.asarray(reference_scores, dtype=np.float64)
    if scores.shape != ref.shape:
        raise ValueError("score sequences have different lengths")
    if np.any(ref <= 0):
        raise ValueError("reference scores must be > 0")
    out = scores / ref
    return 100.0 * out if percent else out


@dataclass(frozen=True)
class InverseGammaParams:
    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("shape and scale must be > 0")

    @property
    def mean(self) -> float:
        if self.shape <= 1:
            raise ValueError("mean undefined for shape <= 1")
        return self.scale / (self.shape - 1)


DEFAULT_PRIOR = InverseGammaParams(0.001, 0.001)


def sample_inverse_gamma(params: InverseGammaParams, rng) -> float:
    """Reciprocal-of-gamma draw; density proportional to x^{-a-1} e^{-b/x}."""
    rng = as_generator(rng)
    return float(1.0 / rng.gamma(params.shape, 1.0 / params.scale))


def _corr_solve(corr_factor, v):
    if isinstance(corr_factor, SparseLowerTriangular):
        return corr_factor.solve(v)
    return sla.solve_triangular(corr_factor, v, lower=True)


def sigma_w_posterior(
    states: np.ndarray,
    m: StateSpaceModel,
    prior: InverseGammaParams,
    corr_factor,
) -> InverseGammaParams:
    """Conjugate inverse-gamma posterior of the model-error variance.

    Assumes ``Q_t = sigma_w^2 C`` for a fixed correlation matrix C whose
    (possibly pattern-constrained) Cholesky factor is ``corr_factor``.
    Shape grows by ``n (T-1) / 2``; the scale accumulates half the residual
    quadratic forms ``(x_t - E_t x_{t-1})^T C^{-1} (x_t - E_t x_{t-1})``
    for t = 2..T, evaluated through triangular solves.

    ``states`` holds the latent states for t = 1..T, shape (T, n).
    """
    states = np.asarray(states, dtype=np.float64)
    if states.shape != (m.T, m.n):
        raise ValueError(f"states must have shape ({m.T}, {m.n})")
    quad = 0.0
    for t in range(2, m.T + 1):
        resid = states[t - 1] - m.E_at(t) @ states[t - 2]
        z = _corr_solve(corr_factor, resid)
        quad += float(z @ z)
    return InverseGammaParams(
        prior.shape + m.n * (m.T - 1) / 2.0, prior.scale + 0.5 * quad
    )


def gibbs_sigma_w(
    m: StateSpaceModel,
    y: list,
    S: SparsityPattern,
    iters: int,
    init: float,
    rng,
    prior: InverseGammaParams = DEFAULT_PRIOR,
    corr=None,
) -> np.ndarray:
    """Gibbs chain for the model-error variance.

    Alternates (i) one smoothing-distribution draw of the latent states
    given the current variance and (ii) an inverse-gamma draw of the
    variance given those states.  The model's noise covariance must be
    ``sigma^2 * C``; pass the correlation accessor ``corr`` explicitly if
    the model does not carry a :class:`ScaledCovariance`.

    Returns the raw variance chain, one entry per iteration.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if init <= 0:
        raise ValueError("init must be > 0")
    rng = as_generator(rng)
    if corr is None:
        qt = m.Q_at(1)
        if not isinstance(qt, ScaledCovariance):
            raise ValueError(
                "model noise is not a ScaledCovariance; pass corr= explicitly"
            )
        corr = qt.base
    corr_factor = hcf(S, corr)
    corr_values = values_on_pattern(S, corr)
    init_factor = hcf(S, m.initial_cov)

    sigma = float(init)
    chain = np.empty(iters)
    for it in range(iters):
        m_it = _with_noise(m, ScaledCovariance(sigma, corr))
        states = scalable_ffbs(
            m_it,
            y,
            S,
            1,
            rng,
            init_factor=init_factor,
            q_factor=corr_factor.scaled(np.sqrt(sigma)),
            q_pattern_values=sigma * corr_values,
        )[0]
        post = sigma_w_posterior(states, m_it, prior, corr_factor)
        sigma = sample_inverse_gamma(post, rng)
        chain[it] = sigma
    return chain


def _with_noise(m: StateSpaceModel, noise) -> StateSpaceModel:
    return StateSpaceModel(
        n=m.n,
        T=m.T,
        evolution=m.evolution,
        model_noise=noise,
        observed=m.observed,
        noise_var=m.noise_var,
        initial_mean=m.initial_mean,
        initial_cov=m.initial_cov,
    )


def burned_mean(chain: np.ndarray, burn_fraction: float = 0.2) -> float:
    """Chain mean after discarding the leading burn-in fraction."""
    chain = np.asarray(chain, dtype=np.float64)
    start = int(len(chain) * burn_fraction)
    return float(np.mean(chain[start:]))
