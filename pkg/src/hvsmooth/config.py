"""Experiment configuration: a flat ``key = value`` format with
``[section]`` headers.

The format is deliberately minimal so it round-trips bit-exactly through
:meth:`ExperimentConfig.to_text` and parses identically in any language:
one key per line, ``#`` comment lines, no nesting, no quoting.  Unknown
sections or keys are rejected with the offending line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np


class ConfigError(ValueError):
    def __init__(self, message, source=None, line=None):
        where = f"{source or 'config'}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


@dataclass(frozen=True)
class ModelConfig:
    rows: int = 34
    cols: int = 34
    T: int = 20
    kernel: str = "exponential"
    sigma0_sq: float = 1.0
    sigma_w_sq: float = 0.1
    sigma_v_sq: float = 0.05
    range: float = 0.15
    alpha: float = 4e-05
    beta: float = 0.01
    damping: float = 1.0
    obs_fraction: float = 0.3


@dataclass(frozen=True)
class MethodConfig:
    pattern: str = "hv"
    J: int = 2
    r: int = 0  # uniform knots per level; 0 = derive from N
    depth: int = -1  # -1 = smallest depth with terminal groups <= r
    N: int = 50  # target max nonzeros per row (conditioning-set size)
    jitter: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    n_samples: int = 50
    n_iter: int = 10
    seed: int = 0
    out: str = "out"
    gibbs_iters: int = 500
    gibbs_burnin: float = 0.2
    gibbs_init: float = -1.0  # <= 0 draws uniformly from (0, 0.5)
    bench_grids: tuple = (17, 24, 34)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_text(self) -> str:
        chunks = []
        for section, obj in self.sections().items():
            chunks.append(f"[{section}]")
            for f in fields(obj):
                chunks.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            chunks.append("")
        return "\n".join(chunks)

    def sections(self) -> dict:
        return {"model": self.model, "method": self.method, "run": self.run}

    def hash(self) -> str:
        """Digest of the experiment identity.

        The output directory is excluded: it locates results but does not
        change them, and identical runs into different directories must
        produce identical files.
        """
        canon = replace(self, run=replace(self.run, out=""))
        return hashlib.sha256(canon.to_text().encode()).hexdigest()[:16]


_SECTIONS = {"model": ModelConfig, "method": MethodConfig, "run": RunConfig}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, target_type, source, line):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is tuple:
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        return raw
    except ValueError:
        raise ConfigError(
            f"cannot parse {raw!r} as {target_type.__name__}", source, line
        ) from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    section = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", source, lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", source, lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", source, lineno)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        cls = _SECTIONS[section]
        schema = {f.name: f.type for f in fields(cls)}
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}]", source, lineno)
        defaults = cls()
        target_type = type(getattr(defaults, key))
        values[section][key] = _parse_value(raw, target_type, source, lineno)
    cfg = ExperimentConfig(
        model=ModelConfig(**values["model"]),
        method=MethodConfig(**values["method"]),
        run=RunConfig(**values["run"]),
    )
    validate_config(cfg, source)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from exc
    return parse_config(text, source=str(path))


def validate_config(cfg: ExperimentConfig, source: str = "<config>") -> None:
    def bad(section, key, message):
        raise ConfigError(f"{section}.{key} {message}", source)

    mo = cfg.model
    if mo.rows < 1 or mo.cols < 1:
        bad("model", "rows/cols", "must be >= 1")
    if mo.T < 1:
        bad("model", "T", "must be >= 1")
    if mo.kernel not in ("exponential", "matern15"):
        bad("model", "kernel", "must be exponential or matern15")
    if mo.range <= 0:
        bad("model", "range", "must be > 0")
    if mo.sigma0_sq < 0 or mo.sigma_w_sq < 0:
        bad("model", "sigma0_sq/sigma_w_sq", "must be >= 0")
    if mo.sigma_v_sq <= 0:
        bad("model", "sigma_v_sq", "must be > 0")
    if mo.alpha < 0 or mo.beta < 0:
        bad("model", "alpha/beta", "must be >= 0")
    if not 0 < mo.damping <= 1:
        bad("model", "damping", "must be in (0, 1]")
    if not 0 < mo.obs_fraction <= 1:
        bad("model", "obs_fraction", "must be in (0, 1]")

    me = cfg.method
    if me.pattern not in ("hv", "lowrank", "dense"):
        bad("method", "pattern", "must be hv, lowrank, or dense")
    if me.J not in (2, 4):
        bad("method", "J", "must be 2 or 4")
    if me.r < 0:
        bad("method", "r", "must be >= 0")
    if me.N < 1:
        bad("method", "N", "must be >= 1")
    if me.jitter < 0:
        bad("method", "jitter", "must be >= 0")

    ru = cfg.run
    if ru.n_samples < 1:
        bad("run", "n_samples", "must be >= 1")
    if ru.n_iter < 1:
        bad("run", "n_iter", "must be >= 1")
    if ru.gibbs_iters < 1:
        bad("run", "gibbs_iters", "must be >= 1")
    if not 0 <= ru.gibbs_burnin < 1:
        bad("run", "gibbs_burnin", "must be in [0, 1)")
    if not ru.bench_grids or any(g < 2 for g in ru.bench_grids):
        bad("run", "bench_grids", "must list grid sides >= 2")


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` strings on top of a parsed config."""
    sections = {name: dict() for name in _SECTIONS}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, _, raw = item.partition("=")
        section, _, key = dotted.strip().partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        cls = _SECTIONS[section]
        if key not in {f.name for f in fields(cls)}:
            raise ConfigError(f"unknown key {key!r} in override {item!r}")
        target_type = type(getattr(cls(), key))
        sections[section][key] = _parse_value(raw.strip(), target_type, "<override>", None)
    new = ExperimentConfig(
        model=replace(cfg.model, **sections["model"]),
        method=replace(cfg.method, **sections["method"]),
        run=replace(cfg.run, **sections["run"]),
    )
    validate_config(new, "<override>")
    return new


def gibbs_init_value(cfg: ExperimentConfig, rng: np.random.Generator) -> float:
    """Configured chain start, or a uniform draw from (0, 0.5)."""
    if cfg.run.gibbs_init > 0:
        return cfg.run.gibbs_init
    return float(rng.uniform(0.0, 0.5))
