"""Experiment configuration: one versioned JSON document per run.

Every tunable in the pipeline is reachable from here; nothing is hidden in
module constants.  Configs round-trip exactly (parse -> serialize -> parse
is the identity).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .forward import Inclusion

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key path."""


@dataclass
class MeshConfig:
    target_h: float = 0.06
    view_fraction: float = 1.0
    view_offset: float = 0.0


@dataclass
class PhantomConfig:
    background: float = 4.0
    mollify_width: float = 0.03
    inclusions: list = field(default_factory=lambda: [
        {"cx": 0.00, "cy": 0.62, "radius": 0.18, "value": 8.0},
        {"cx": 0.42, "cy": 0.18, "radius": 0.12, "value": 8.0},
        {"cx": -0.38, "cy": 0.25, "radius": 0.14, "value": 8.0},
        {"cx": -0.15, "cy": -0.25, "radius": 0.22, "value": 8.0},
        {"cx": 0.30, "cy": -0.45, "radius": 0.10, "value": 8.0},
        {"cx": -0.55, "cy": -0.30, "radius": 0.08, "value": 8.0},
    ])

    def inclusion_objects(self) -> list[Inclusion]:
        return [Inclusion(**inc) for inc in self.inclusions]


@dataclass
class InputsConfig:
    ell_bound: int = 1
    include_f2: bool = False
    f2_taper_fraction: float = 0.1


@dataclass
class NoiseConfig:
    d_noise: float = 0.01
    norm_kind: str = "l2"
    seed: int = 101


@dataclass
class PriorConfig:
    kind: str = "sigmoid"          # log_gaussian | heaviside | sigmoid
    matern_tau: float = 6.0
    matern_alpha: float = 2.0
    n_kl: int = 100
    pool_size: int = 200
    sigma_minus: float = 4.0
    sigma_plus: float = 8.0
    sharpness: float = 50.0
    f1_shift: float = 3.0          # sigma = f1_shift + f1_scale * exp(X)
    f1_scale: float = 2.0


@dataclass
class SamplerConfig:
    n_warmup: int = 500
    n_samples: int = 2000
    beta0: float = 0.08
    thin: int = 1
    seed: int = 202
    n_chains: int = 1
    target_accept: float = 0.23
    adapt_window: int = 25
    adapt_decay: float = 0.6
    beta_min: float = 1e-4
    beta_max: float = 0.12
    burn_in_drop: int = 0


@dataclass
class AnalyticConfig:
    threshold_b: float = 0.002
    gauge: str = "rotated"
    # abort when min det < -jacobian_rel_tol * max det (limited views drive
    # the determinant to zero along the grounded boundary, so exact
    # positivity is not attainable discretely)
    jacobian_rel_tol: float = 1e-2


@dataclass
class SolverConfig:
    method: str = "direct"         # direct | cg
    cg_tol: float = 1e-10
    eigs_tol: float = 1e-8


@dataclass
class CompareConfig:
    trust_std_threshold: float = 1.0


@dataclass
class ExperimentConfig:
    schema: int = SCHEMA_VERSION
    output_dir: str = "out"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    analytic: AnalyticConfig = field(default_factory=AnalyticConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "mesh": MeshConfig,
    "phantom": PhantomConfig,
    "inputs": InputsConfig,
    "noise": NoiseConfig,
    "prior": PriorConfig,
    "sampler": SamplerConfig,
    "analytic": AnalyticConfig,
    "solver": SolverConfig,
    "compare": CompareConfig,
}


def _build_section(name, cls, payload):
    if not isinstance(payload, dict):
        raise ConfigError(f"{name}: expected an object, got {type(payload).__name__}")
    known = cls.__dataclass_fields__
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a JSON object")
    schema = data.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {schema}")
    unknown = set(data) - set(_SECTIONS) - {"schema", "output_dir"}
    if unknown:
        raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
    kwargs = {"schema": schema}
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(name, cls, data[name])
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: "
                              f"{exc.msg}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_json())


def validate_config(cfg: ExperimentConfig) -> None:
    def check(cond, path, msg):
        if not cond:
            raise ConfigError(f"{path}: {msg}")

    m = cfg.mesh
    check(0 < m.target_h <= 0.5, "mesh.target_h", f"must be in (0, 0.5], got {m.target_h}")
    check(0 < m.view_fraction <= 1, "mesh.view_fraction",
          f"must be in (0, 1], got {m.view_fraction}")
    check(math.isfinite(m.view_offset), "mesh.view_offset", "must be finite")

    p = cfg.phantom
    check(p.background > 0, "phantom.background", "must be positive")
    check(p.mollify_width > 0, "phantom.mollify_width", "must be positive")
    for i, inc in enumerate(p.inclusions):
        check(set(inc) <= {"cx", "cy", "radius", "value"},
              f"phantom.inclusions[{i}]", f"unknown keys {sorted(set(inc) - {'cx','cy','radius','value'})}")
        check(inc.get("radius", 0) > 0, f"phantom.inclusions[{i}].radius", "must be positive")

    check(cfg.inputs.ell_bound >= 1, "inputs.ell_bound", "must be >= 1")
    check(0 < cfg.inputs.f2_taper_fraction < 0.5, "inputs.f2_taper_fraction",
          "must be in (0, 0.5)")

    check(cfg.noise.d_noise >= 0, "noise.d_noise", "must be >= 0")
    check(cfg.noise.norm_kind in ("l1", "l2"), "noise.norm_kind",
          f"must be 'l1' or 'l2', got {cfg.noise.norm_kind!r}")

    pr = cfg.prior
    check(pr.kind in ("log_gaussian", "heaviside", "sigmoid"), "prior.kind",
          f"unknown kind {pr.kind!r}")
    check(pr.matern_alpha > 1.5, "prior.matern_alpha", "must exceed 1.5")
    check(pr.matern_tau > 0, "prior.matern_tau", "must be positive")
    check(0 < pr.n_kl <= pr.pool_size, "prior.n_kl",
          "need 0 < n_kl <= pool_size")
    check(pr.sigma_minus > 0 and pr.sigma_plus > 0, "prior.sigma_minus/plus",
          "level values must be positive")
    check(pr.sharpness > 0, "prior.sharpness", "must be positive")

    s = cfg.sampler
    check(s.n_warmup >= 0 and s.n_samples >= 0, "sampler", "counts must be >= 0")
    check(0 < s.beta0 < 1, "sampler.beta0", "must lie in (0, 1)")
    check(s.thin >= 1, "sampler.thin", "must be >= 1")
    check(s.n_chains >= 1, "sampler.n_chains", "must be >= 1")
    check(0 < s.target_accept < 1, "sampler.target_accept", "must lie in (0, 1)")
    check(s.adapt_window >= 1, "sampler.adapt_window", "must be >= 1")
    check(0 < s.beta_min < s.beta_max < 1, "sampler.beta_min/max",
          "need 0 < beta_min < beta_max < 1")
    check(s.burn_in_drop >= 0, "sampler.burn_in_drop", "must be >= 0")

    check(cfg.analytic.threshold_b > 0, "analytic.threshold_b", "must be positive")
    check(cfg.analytic.gauge in ("rotated", "literal"), "analytic.gauge",
          f"unknown gauge {cfg.analytic.gauge!r}")
    check(cfg.analytic.jacobian_rel_tol >= 0, "analytic.jacobian_rel_tol",
          "must be >= 0")

    check(cfg.solver.method in ("direct", "cg"), "solver.method",
          f"must be 'direct' or 'cg', got {cfg.solver.method!r}")
    check(cfg.compare.trust_std_threshold > 0, "compare.trust_std_threshold",
          "must be positive")
