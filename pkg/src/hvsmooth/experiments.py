"""Experiment drivers: datasets, method layouts, and the study runners
behind the CLI subcommands (simulation, filtering/smoothing, sampling,
score comparison, Gibbs chains, and the scaling benchmark).

All randomness flows from ``run.seed`` through named SeedSequence spawns,
so every output file is a pure function of (config, seed).  Files are CSV
with ``#``-prefixed metadata lines and are written atomically
(temp-then-rename).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import hv, opcount, scoring
from .config import ExperimentConfig, gibbs_init_value
from .models import (
    AdvectionDiffusionConfig,
    CovarianceSpec,
    KernelCovariance,
    ScaledCovariance,
    StateSpaceModel,
    advection_diffusion_matrix,
    observation_selector,
    simulate_trajectory,
)
from .ordering import (
    SpatialGrid,
    SparsityPattern,
    build_dense_pattern,
    build_lowrank_pattern,
    hv_layout,
    hv_layout_for_target,
    load_pattern,
)

METHODS = ("hv", "lowrank", "dense")
REFERENCE_METHOD = "dense"


@dataclass
class MethodLayout:
    """A sparsity pattern plus the variable order it is expressed in."""

    name: str
    pattern: SparsityPattern
    perm: np.ndarray  # pattern position -> original grid index
    inv_perm: np.ndarray

    @classmethod
    def create(cls, name, pattern, perm):
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        return cls(name, pattern, perm, inv)

    def to_user(self, vec_pattern: np.ndarray) -> np.ndarray:
        out = np.empty_like(vec_pattern)
        out[..., self.perm] = vec_pattern
        return out


@dataclass
class Dataset:
    """Simulated truth and observations in original grid order."""

    x_true: np.ndarray  # (T+1, n)
    obs: list  # per-time original grid indices
    y: list  # per-time observed values


def make_grid(cfg: ExperimentConfig) -> SpatialGrid:
    return SpatialGrid.regular(cfg.model.rows, cfg.model.cols)


def make_layout(
    cfg: ExperimentConfig,
    grid: SpatialGrid,
    name: str,
    hv_reference: MethodLayout | None = None,
) -> MethodLayout:
    """Build one method's pattern and variable order.

    The low-rank baseline conditions on leading maxmin variables; when an
    HV layout is supplied its column count is chosen so both patterns have
    the same maximum row count (matched conditioning-set size).
    """
    me = cfg.method
    if name == "hv":
        if me.r > 0:
            pattern, perm = hv_layout(
                grid, J=me.J, knots_per_level=me.r, depth=None if me.depth < 0 else me.depth
            )
        else:
            pattern, perm = hv_layout_for_target(grid, J=me.J, target_n=me.N)
        return MethodLayout.create(name, pattern, perm)
    if name == "lowrank":
        target = hv_reference.pattern.max_row_nnz if hv_reference else me.N
        ncols = min(max(target - 1, 1), grid.n)
        return MethodLayout.create(
            name, build_lowrank_pattern(grid.n, ncols), grid.order.copy()
        )
    if name == "dense":
        return MethodLayout.create(name, build_dense_pattern(grid.n), grid.order.copy())
    raise ValueError(f"unknown method {name!r}")


def _kernel_specs(cfg: ExperimentConfig):
    mo = cfg.model
    corr = CovarianceSpec(mo.kernel, 1.0, mo.range)
    init = CovarianceSpec(mo.kernel, mo.sigma0_sq, mo.range)
    return corr, init


def _advection_config(cfg: ExperimentConfig, cols: int) -> AdvectionDiffusionConfig:
    mo = cfg.model
    spacing = 1.0 / (cols - 1) if cols > 1 else 1.0
    return AdvectionDiffusionConfig(
        alpha=mo.alpha, beta=mo.beta, spacing=spacing, dt=1.0, damping=mo.damping
    )


def _evolution_user(cfg: ExperimentConfig, rows: int, cols: int):
    return advection_diffusion_matrix(_advection_config(cfg, cols), (rows, cols))


def build_model(
    cfg: ExperimentConfig, grid: SpatialGrid, layout: MethodLayout, dataset: Dataset
):
    """State-space model in the layout's variable order, plus aligned data."""
    mo = cfg.model
    perm = layout.perm
    points = grid.locations[perm]
    corr_spec, init_spec = _kernel_specs(cfg)
    corr = KernelCovariance(corr_spec, points)
    E_user = _evolution_user(cfg, mo.rows, mo.cols)
    E = E_user[perm, :][:, perm].tocsr()

    observed = []
    ys = []
    for obs_user, y_user in zip(dataset.obs, dataset.y):
        pos = layout.inv_perm[obs_user]
        order = np.argsort(pos)
        observed.append(pos[order])
        ys.append(np.asarray(y_user)[order])

    model = StateSpaceModel(
        n=grid.n,
        T=mo.T,
        evolution=E,
        model_noise=ScaledCovariance(mo.sigma_w_sq, corr),
        observed=observed,
        noise_var=mo.sigma_v_sq,
        initial_mean=np.zeros(grid.n),
        initial_cov=KernelCovariance(init_spec, points),
    )
    return model, ys


def make_dataset(
    cfg: ExperimentConfig, grid: SpatialGrid, rng: np.random.Generator
) -> Dataset:
    """Simulate one truth trajectory and its observations, in grid order."""
    mo = cfg.model
    corr_spec, init_spec = _kernel_specs(cfg)
    observed = [
        observation_selector(grid.n, mo.obs_fraction, rng) for _ in range(mo.T)
    ]
    model = StateSpaceModel(
        n=grid.n,
        T=mo.T,
        evolution=_evolution_user(cfg, mo.rows, mo.cols),
        model_noise=ScaledCovariance(mo.sigma_w_sq, KernelCovariance(corr_spec, grid.locations)),
        observed=observed,
        noise_var=mo.sigma_v_sq,
        initial_mean=np.zeros(grid.n),
        initial_cov=KernelCovariance(init_spec, grid.locations),
    )
    x, ys = simulate_trajectory(model, rng)
    return Dataset(x, observed, ys)


# ----------------------------------------------------------------------
# Output helpers
# ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, meta: dict, header: list, rows) -> None:
    """Atomic CSV write with ``#`` metadata lines before the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {"config_hash": cfg.hash(), "seed": cfg.run.seed}
    meta.update(extra)
    return meta


def _outdir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.run.out)


def _state_header(n: int) -> list:
    return ["t"] + [f"s{i}" for i in range(n)]


# ----------------------------------------------------------------------
# Subcommand drivers
# ----------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig) -> list:
    """Simulate one truth trajectory and its observations."""
    grid = make_grid(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.run.seed).spawn(1)[0])
    ds = make_dataset(cfg, grid, rng)
    out = _outdir(cfg)
    truth_rows = [[t] + list(ds.x_true[t]) for t in range(cfg.model.T + 1)]
    write_csv(out / "truth.csv", _meta(cfg), _state_header(grid.n), truth_rows)
    obs_rows = []
    for t in range(1, cfg.model.T + 1):
        for idx, val in zip(ds.obs[t - 1], ds.y[t - 1]):
            obs_rows.append([t, idx, val])
    write_csv(out / "obs.csv", _meta(cfg), ["t", "grid_index", "value"], obs_rows)
    return [out / "truth.csv", out / "obs.csv"]


def _dataset_and_layout(cfg: ExperimentConfig, pattern_file=None):
    grid = make_grid(cfg)
    root = np.random.SeedSequence(cfg.run.seed)
    data_ss, ops_ss = root.spawn(2)
    ds = make_dataset(cfg, grid, np.random.default_rng(data_ss))
    if pattern_file is not None:
        pattern = load_pattern(pattern_file)
        if pattern.n != grid.n:
            raise ValueError(
                f"pattern file is for n={pattern.n}, grid has n={grid.n}"
            )
        layout = MethodLayout.create("file", pattern, grid.order.copy())
    else:
        name = cfg.method.pattern
        hv_ref = None
        if name == "lowrank":
            hv_ref = make_layout(cfg, grid, "hv")
        layout = make_layout(cfg, grid, name, hv_reference=hv_ref)
    model, ys = build_model(cfg, grid, layout, ds)
    return grid, ds, layout, model, ys, ops_ss


def run_filter(cfg: ExperimentConfig, pattern_file=None, dump_factors=False) -> list:
    """Write per-time filtering means (original grid order)."""
    grid, ds, layout, model, ys, _ = _dataset_and_layout(cfg, pattern_file)
    state = hv.hvf(model, ys, layout.pattern, jitter=cfg.method.jitter)
    rows = [
        [t] + list(layout.to_user(state.mu_filt[t])) for t in range(cfg.model.T + 1)
    ]
    out = _outdir(cfg) / "filter_means.csv"
    write_csv(out, _meta(cfg, method=layout.name), _state_header(grid.n), rows)
    files = [out]
    if dump_factors:
        from .sparselin import save_factor

        fdir = _outdir(cfg) / "factors"
        fdir.mkdir(parents=True, exist_ok=True)
        for t in range(cfg.model.T + 1):
            if t > 0:
                save_factor(state.L_pred[t], fdir / f"forecast_{t:03d}.txt")
                files.append(fdir / f"forecast_{t:03d}.txt")
            save_factor(state.L_filt[t], fdir / f"filtering_{t:03d}.txt")
            files.append(fdir / f"filtering_{t:03d}.txt")
    return files


def run_smooth(cfg: ExperimentConfig, pattern_file=None) -> list:
    """Write per-time smoothing means (original grid order)."""
    grid, ds, layout, model, ys, _ = _dataset_and_layout(cfg, pattern_file)
    means = hv.hvs(model, ys, layout.pattern, jitter=cfg.method.jitter)
    rows = [[t + 1] + list(layout.to_user(means[t])) for t in range(cfg.model.T)]
    out = _outdir(cfg) / "smooth_means.csv"
    write_csv(out, _meta(cfg, method=layout.name), _state_header(grid.n), rows)
    return [out]


def run_sample(cfg: ExperimentConfig, pattern_file=None) -> list:
    """Draw smoothing samples and write them as one wide CSV."""
    grid, ds, layout, model, ys, ops_ss = _dataset_and_layout(cfg, pattern_file)
    samples = hv.scalable_ffbs(
        model,
        ys,
        layout.pattern,
        cfg.run.n_samples,
        np.random.default_rng(ops_ss),
        jitter=cfg.method.jitter,
    )
    rows = []
    for s in range(cfg.run.n_samples):
        for t in range(1, cfg.model.T + 1):
            rows.append([s, t] + list(layout.to_user(samples[s, t - 1])))
    out = _outdir(cfg) / "samples.csv"
    write_csv(
        out,
        _meta(cfg, method=layout.name, n_samples=cfg.run.n_samples),
        ["sample", "t"] + [f"s{i}" for i in range(grid.n)],
        rows,
    )
    return [out]


def run_eval_crps(cfg: ExperimentConfig, methods=METHODS) -> list:
    """Score each method's ensembles against the simulated truth.

    Per-time scores are averaged over replicates and then ratioed against
    the dense reference method.
    """
    grid = make_grid(cfg)
    T = cfg.model.T
    layouts = {}
    hv_ref = make_layout(cfg, grid, "hv")
    for name in methods:
        layouts[name] = hv_ref if name == "hv" else make_layout(
            cfg, grid, name, hv_reference=hv_ref
        )

    scores = {name: np.empty((cfg.run.n_iter, T)) for name in methods}
    root = np.random.SeedSequence(cfg.run.seed)
    score_rows = []
    for rep, rep_ss in enumerate(root.spawn(cfg.run.n_iter)):
        children = rep_ss.spawn(1 + len(methods))
        ds = make_dataset(cfg, grid, np.random.default_rng(children[0]))
        for k, name in enumerate(methods):
            layout = layouts[name]
            model, ys = build_model(cfg, grid, layout, ds)
            samples = hv.scalable_ffbs(
                model,
                ys,
                layout.pattern,
                cfg.run.n_samples,
                np.random.default_rng(children[1 + k]),
                jitter=cfg.method.jitter,
            )
            for t in range(1, T + 1):
                ensemble = layout.to_user(samples[:, t - 1, :])
                sc = scoring.crps(ensemble, ds.x_true[t])
                scores[name][rep, t - 1] = sc
                score_rows.append([name, rep, t, sc])

    out = _outdir(cfg)
    write_csv(
        out / "crps_scores.csv",
        _meta(cfg, n_samples=cfg.run.n_samples, n_iter=cfg.run.n_iter),
        ["method", "replicate", "t", "crps"],
        score_rows,
    )
    mean_scores = {name: scores[name].mean(axis=0) for name in methods}
    ref = mean_scores.get(REFERENCE_METHOD)
    ratio_rows = []
    for name in methods:
        ratios = (
            scoring.crps_ratio(mean_scores[name], ref)
            if ref is not None
            else np.full(T, np.nan)
        )
        for t in range(1, T + 1):
            ratio_rows.append([name, t, mean_scores[name][t - 1], ratios[t - 1]])
    write_csv(
        out / "crps_ratios.csv",
        _meta(cfg, reference=REFERENCE_METHOD),
        ["method", "t", "mean_crps", "ratio"],
        ratio_rows,
    )
    return [out / "crps_scores.csv", out / "crps_ratios.csv"]


def run_gibbs(cfg: ExperimentConfig) -> list:
    """Run the model-error-variance Gibbs chain and persist it."""
    grid = make_grid(cfg)
    root = np.random.SeedSequence(cfg.run.seed)
    data_ss, init_ss, chain_ss = root.spawn(3)
    ds = make_dataset(cfg, grid, np.random.default_rng(data_ss))
    name = cfg.method.pattern
    hv_ref = make_layout(cfg, grid, "hv") if name == "lowrank" else None
    layout = make_layout(cfg, grid, name, hv_reference=hv_ref)
    model, ys = build_model(cfg, grid, layout, ds)
    init = gibbs_init_value(cfg, np.random.default_rng(init_ss))
    chain = scoring.gibbs_sigma_w(
        model,
        ys,
        layout.pattern,
        cfg.run.gibbs_iters,
        init,
        np.random.default_rng(chain_ss),
    )
    rows = [[i, chain[i]] for i in range(len(chain))]
    out = _outdir(cfg) / f"gibbs_chain_{layout.name}.csv"
    write_csv(
        out,
        _meta(
            cfg,
            method=layout.name,
            init=init,
            burned_mean=scoring.burned_mean(chain, cfg.run.gibbs_burnin),
        ),
        ["iteration", "sigma_w_sq"],
        rows,
    )
    return [out]


def run_bench(cfg: ExperimentConfig, methods=METHODS) -> list:
    """Timing/operation-count sweep over grid sizes (one draw per method)."""
    rows = []
    for side in cfg.run.bench_grids:
        side_cfg = ExperimentConfig(
            model=replace(cfg.model, rows=side, cols=side),
            method=cfg.method,
            run=cfg.run,
        )
        grid = make_grid(side_cfg)
        root = np.random.SeedSequence(cfg.run.seed)
        data_ss, ops_ss = root.spawn(2)
        ds = make_dataset(side_cfg, grid, np.random.default_rng(data_ss))
        hv_ref = make_layout(side_cfg, grid, "hv")
        for name in methods:
            layout = hv_ref if name == "hv" else make_layout(
                side_cfg, grid, name, hv_reference=hv_ref
            )
            model, ys = build_model(side_cfg, grid, layout, ds)
            with opcount.count_ops() as factor_ops:
                t0 = time.perf_counter()
                factors = hv.hv_factor_pass(model, layout.pattern, jitter=cfg.method.jitter)
                t_factor = time.perf_counter() - t0
            with opcount.count_ops() as sample_ops:
                t0 = time.perf_counter()
                hv.scalable_ffbs(
                    model,
                    ys,
                    layout.pattern,
                    1,
                    np.random.default_rng(ops_ss),
                    factors=factors,
                )
                t_sample = time.perf_counter() - t0
            rows.append(
                [
                    grid.n,
                    side,
                    name,
                    layout.pattern.max_row_nnz,
                    t_factor,
                    t_sample,
                    t_factor + t_sample,
                    factor_ops.total,
                    sample_ops.total,
                    factor_ops.total + sample_ops.total,
                ]
            )
    out = _outdir(cfg) / "bench.csv"
    write_csv(
        out,
        _meta(cfg),
        [
            "n",
            "side",
            "method",
            "N",
            "seconds_factor",
            "seconds_sample",
            "seconds_total",
            "ops_factor",
            "ops_sample",
            "ops_total",
        ],
        rows,
    )
    return [out]
