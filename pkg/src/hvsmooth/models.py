"""Process-model builders: covariance kernels, the advection-diffusion
evolution operator, the state-space model container, and trajectory/data
simulation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .ordering import SpatialGrid
from .sparselin import FactorizationError, SparseLowerTriangular

KERNELS = ("exponential", "matern15")
_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class CovarianceSpec:
    """Stationary isotropic kernel: family, marginal variance, range."""

    kernel: str = "exponential"
    variance: float = 1.0
    range_: float = 0.15

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; pick one of {KERNELS}")
        if self.range_ <= 0:
            raise ValueError("range must be > 0")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")

    def correlation(self, d: np.ndarray) -> np.ndarray:
        t = np.asarray(d, dtype=np.float64) / self.range_
        if self.kernel == "exponential":
            return np.exp(-t)
        return (1.0 + _SQRT3 * t) * np.exp(-_SQRT3 * t)

    def __call__(self, d: np.ndarray) -> np.ndarray:
        return self.variance * self.correlation(d)


class KernelCovariance:
    """Kernel matrix over a point set, evaluable entry-wise.

    Provides ``entries(rows, cols)`` for selected-entry consumers (only the
    requested entries are ever computed) and ``dense()`` for the oracle
    paths.
    """

    def __init__(self, spec: CovarianceSpec, points):
        self.spec = spec
        self.points = np.asarray(points, dtype=np.float64)
        self.n = self.points.shape[0]

    def entries(self, rows, cols) -> np.ndarray:
        diff = self.points[rows] - self.points[cols]
        return self.spec(np.sqrt(np.sum(diff * diff, axis=-1)))

    def dense(self) -> np.ndarray:
        return self.spec(cdist(self.points, self.points))


class DenseCovariance:
    """Adapter giving a plain symmetric matrix the accessor interface."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.n = self.matrix.shape[0]

    def entries(self, rows, cols):
        return self.matrix[rows, cols]

    def dense(self):
        return self.matrix


class ScaledCovariance:
    """``scale * base``; used for variance parameters sampled by Gibbs."""

    def __init__(self, scale: float, base):
        self.scale = float(scale)
        self.base = base
        self.n = base.n

    def entries(self, rows, cols):
        return self.scale * self.base.entries(rows, cols)

    def dense(self):
        return self.scale * self.base.dense()


def covariance_matrix(spec: CovarianceSpec, grid) -> KernelCovariance:
    """Kernel covariance accessor over a grid or raw point array."""
    points = grid.locations if isinstance(grid, SpatialGrid) else grid
    return KernelCovariance(spec, points)


@dataclass(frozen=True)
class AdvectionDiffusionConfig:
    """Coefficients of the discretized advection-diffusion step.

    The evolution operator is ``damping * (I + dt * (alpha * Lap + beta *
    Grad))`` with the 5-point Laplacian and centered first differences on
    both axes, Dirichlet-zero outside the grid.
    """

    alpha: float = 4e-5
    beta: float = 1e-2
    spacing: float = 1.0 / 33.0
    dt: float = 1.0
    damping: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.spacing <= 0 or self.dt <= 0:
            raise ValueError("spacing and dt must be > 0")

    @property
    def stability_number(self) -> float:
        """Explicit-scheme heuristic; values >= 1 suggest instability."""
        h = self.spacing
        return 4 * self.alpha * self.dt / h**2 + 2 * self.beta * self.dt / h


def advection_diffusion_matrix(
    cfg: AdvectionDiffusionConfig, shape: tuple
) -> sp.csr_matrix:
    """Sparse evolution matrix on a regular ``rows x cols`` grid, row-major.

    At most 5 nonzeros per row: the centre carries ``1 - 4 a`` and each axis
    neighbour ``a +/- g`` (times damping), where ``a = alpha dt / h^2`` and
    ``g = beta dt / 2h``.
    """
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValueError("grid shape must be positive")
    if cfg.stability_number >= 1.0:
        warnings.warn(
            f"explicit scheme heuristic {cfg.stability_number:.3f} >= 1; "
            "the evolution matrix may be unstable",
            stacklevel=2,
        )
    h = cfg.spacing
    a = cfg.alpha * cfg.dt / h**2
    g = cfg.beta * cfg.dt / (2.0 * h)

    def d2(m):  # tridiag(1, -2, 1), Dirichlet-zero boundary
        return sp.diags_array([1.0, -2.0, 1.0], offsets=[-1, 0, 1], shape=(m, m))

    def d1(m):  # tridiag(-1, 0, 1)
        return sp.diags_array([-1.0, 0.0, 1.0], offsets=[-1, 0, 1], shape=(m, m))

    ir = sp.identity(rows)
    ic = sp.identity(cols)
    lap = sp.kron(ir, d2(cols)) + sp.kron(d2(rows), ic)
    grad = sp.kron(ir, d1(cols)) + sp.kron(d1(rows), ic)
    n = rows * cols
    E = cfg.damping * (sp.identity(n) + a * lap + g * grad)
    return sp.csr_matrix(E)


@dataclass
class StateSpaceModel:
    """Linear-Gaussian state-space model.

    Per-time quantities may be given once (time-invariant) or as length-T
    lists indexed by ``t-1``.  Observation selectors are index arrays into
    the state vector (one unit entry per selector row); the noise variance
    is the diagonal of R, as a scalar or per-observation vector.
    """

    n: int
    T: int
    evolution: Union[sp.spmatrix, list]
    model_noise: Union[object, list]
    observed: list
    noise_var: Union[float, list]
    initial_mean: np.ndarray
    initial_cov: object

    def __post_init__(self):
        self.initial_mean = np.asarray(self.initial_mean, dtype=np.float64)
        if self.initial_mean.shape != (self.n,):
            raise ValueError("initial mean has wrong length")
        if len(self.observed) != self.T:
            raise ValueError("need one observation selector per time point")
        self.observed = [np.asarray(o, dtype=np.int64) for o in self.observed]
        for t, o in enumerate(self.observed, start=1):
            if o.size and (o.min() < 0 or o.max() >= self.n):
                raise ValueError(f"observation selector at t={t} out of range")
        for t in range(1, self.T + 1):
            r = np.asarray(self.R_at(t), dtype=np.float64)
            if np.any(r <= 0):
                raise ValueError("observation noise variances must be > 0")

    @property
    def e_time_invariant(self) -> bool:
        return not isinstance(self.evolution, list)

    @property
    def q_time_invariant(self) -> bool:
        return not isinstance(self.model_noise, list)

    def E_at(self, t: int) -> sp.csr_matrix:
        return self.evolution[t - 1] if isinstance(self.evolution, list) else self.evolution

    def Q_at(self, t: int):
        return self.model_noise[t - 1] if isinstance(self.model_noise, list) else self.model_noise

    def H_at(self, t: int) -> np.ndarray:
        return self.observed[t - 1]

    def R_at(self, t: int):
        return self.noise_var[t - 1] if isinstance(self.noise_var, list) else self.noise_var


def observation_selector(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random subset of ``floor(fraction * n)`` state indices."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    size = int(fraction * n)
    if size == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def _chol_or_zero(A: np.ndarray) -> Optional[np.ndarray]:
    """Dense Cholesky; a literal zero covariance yields deterministic draws."""
    if not A.any():
        return None
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"covariance not factorizable: {exc}") from exc


def _draw(chol, eps):
    return np.zeros_like(eps) if chol is None else chol @ eps


def simulate_trajectory(
    m: StateSpaceModel,
    rng: np.random.Generator,
    init_factor: Optional[SparseLowerTriangular] = None,
    q_factor=None,
):
    """Draw states and observations from the model.

    By default uses exact dense Cholesky factors of the covariances (the
    oracle path).  Passing pattern-constrained factors for the initial and
    model-noise covariances switches the noise generation to sparse
    matrix-vector products, which is how the scalable sampler simulates its
    synthetic trajectories.

    Returns
    -------
    (x, ys)
        ``x`` has shape (T+1, n) with ``x[0]`` the initial state; ``ys`` is
        a list of observation vectors aligned with the model's selectors.
    """
    n, T = m.n, m.T
    x = np.empty((T + 1, n))
    if init_factor is not None:
        x[0] = m.initial_mean + init_factor.matvec(rng.standard_normal(n))
    else:
        x[0] = m.initial_mean + _draw(
            _chol_or_zero(np.asarray(m.initial_cov.dense())), rng.standard_normal(n)
        )

    chol_q = None
    if q_factor is None and m.q_time_invariant:
        chol_q = _chol_or_zero(np.asarray(m.Q_at(1).dense()))
    ys = []
    for t in range(1, T + 1):
        eps = rng.standard_normal(n)
        if q_factor is not None:
            qf = q_factor[t - 1] if isinstance(q_factor, list) else q_factor
            w = qf.matvec(eps)
        elif chol_q is not None or m.q_time_invariant:
            w = _draw(chol_q, eps)
        else:
            w = _draw(_chol_or_zero(np.asarray(m.Q_at(t).dense())), eps)
        x[t] = m.E_at(t) @ x[t - 1] + w
        obs = m.H_at(t)
        noise = np.sqrt(np.broadcast_to(m.R_at(t), obs.shape)) * rng.standard_normal(
            obs.shape[0]
        )
        ys.append(x[t][obs] + noise)
    return x, ys


def as_generator(seed) -> np.random.Generator:
    """Normalize ints, SeedSequences, and Generators to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
