"""Experiment configuration: INI parsing, validation and object builders.

An experiment is described by a single INI file (key/value pairs grouped in
sections).  Parsing is strict: unknown values, malformed numbers and missing
required sections raise :class:`ConfigError` with the offending section and
key named.  The full schema is documented in the repository README.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .bandit import BoundedNoise, Environment, GaussianNoise, PolicyConfig
from .domain import DomainGrid
from .kernels import (
    InducedKernel,
    LinearKernel,
    MaternKernel,
    RBFKernel,
    ScaledKernel,
)
from .losses import CrossEntropyLoss, SquaredErrorLoss
from .models import (
    GaussianIsoPrior,
    IdentityFeatureMap,
    LinearFeatureModel,
    OneHotFeatureMap,
    PolynomialFeatureMap,
    RandomFourierFeatureMap,
    SmoothMLP,
    UniformBoxPrior,
)
from .rng import substream
from .training import ConstantSchedule, LogPowerSchedule, RandomizedRidgeSurrogate

__all__ = ["ConfigError", "ExperimentSpec", "load_config", "parse_config_text", "derive_seed"]


class ConfigError(Exception):
    """Invalid or incomplete experiment configuration."""


def derive_seed(seed: int, *path: int) -> int:
    """Stable 63-bit integer sub-seed for the given path."""
    import numpy as np

    ss = np.random.SeedSequence([int(seed)] + [int(p) for p in path])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ExperimentSpec:
    """Validated plain-value view of a config file."""

    raw_text: str
    values: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()

    def __getitem__(self, key):
        return self.values[key]


_REQUIRED_SECTIONS = ("experiment", "grid", "model", "prior", "loss", "noise", "train")


class _SectionReader:
    def __init__(self, cp: configparser.ConfigParser, section: str):
        self.cp = cp
        self.section = section

    def _fetch(self, key, default):
        if not self.cp.has_option(self.section, key):
            if default is _REQUIRED:
                raise ConfigError(f"missing required key '{key}' in section [{self.section}]")
            return None, default
        return self.cp.get(self.section, key), None

    def str(self, key, default=None, choices=None):
        raw, dflt = self._fetch(key, default)
        val = raw.strip() if raw is not None else dflt
        if choices is not None and val not in choices:
            raise ConfigError(
                f"[{self.section}] {key} must be one of {sorted(choices)}, got {val!r}"
            )
        return val

    def float(self, key, default=None):
        raw, dflt = self._fetch(key, default)
        if raw is None:
            return dflt
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key} must be a number, got {raw!r}") from exc

    def int(self, key, default=None):
        raw, dflt = self._fetch(key, default)
        if raw is None:
            return dflt
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key} must be an integer, got {raw!r}") from exc

    def bool(self, key, default=None):
        raw, dflt = self._fetch(key, default)
        if raw is None:
            return dflt
        try:
            return self.cp.getboolean(self.section, key)
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key} must be a boolean, got {raw!r}") from exc

    def float_list(self, key, default=None):
        raw, dflt = self._fetch(key, default)
        if raw is None:
            return dflt
        try:
            return [float(v) for v in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key} must be a list of numbers, got {raw!r}") from exc

    def int_list(self, key, default=None):
        raw, dflt = self._fetch(key, default)
        if raw is None:
            return dflt
        try:
            return [int(v) for v in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key} must be a list of integers, got {raw!r}") from exc


_REQUIRED = object()


def parse_config_text(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config is not valid INI: {exc}") from exc

    for section in _REQUIRED_SECTIONS:
        if not cp.has_section(section):
            raise ConfigError(f"missing required section [{section}]")

    v: dict = {}

    exp = _SectionReader(cp, "experiment")
    v["name"] = exp.str("name", default="experiment")
    v["horizon"] = exp.int("horizon", default=_REQUIRED)
    v["replications"] = exp.int("replications", default=_REQUIRED)
    v["delta"] = exp.float("delta", default=0.1)
    v["seed"] = exp.int("seed", default=_REQUIRED)
    v["output_dir"] = exp.str("output_dir", default=None)
    v["oracle_diagnostics"] = exp.bool("oracle_diagnostics", default=False)
    v["workers"] = exp.int("workers", default=1)
    v["gap_floor"] = exp.float("gap_floor", default=1e-3)
    if v["horizon"] < 1 or v["replications"] < 1:
        raise ConfigError("[experiment] horizon and replications must be >= 1")
    if not 0.0 < v["delta"] <= 1.0:
        raise ConfigError("[experiment] delta must lie in (0, 1]")

    grid = _SectionReader(cp, "grid")
    v["grid_kind"] = grid.str("kind", default="uniform", choices={"uniform", "linspace"})
    v["grid_m"] = grid.int("m", default=_REQUIRED)
    v["grid_dim"] = grid.int("dim", default=1)
    v["grid_low"] = grid.float("low", default=-1.0)
    v["grid_high"] = grid.float("high", default=1.0)
    # None defers to the effective experiment seed (which overrides may change)
    v["grid_seed"] = grid.int("seed", default=None)

    model = _SectionReader(cp, "model")
    v["model_kind"] = model.str("kind", default="linear_feature",
                                choices={"linear_feature", "mlp"})
    v["feature_map"] = model.str(
        "feature_map", default="random_fourier",
        choices={"random_fourier", "polynomial", "one_hot", "identity"})
    v["n_features"] = model.int("n_features", default=20)
    v["feature_lengthscale"] = model.float("feature_lengthscale", default=1.0)
    v["feature_seed"] = model.int("feature_seed", default=None)
    v["degree"] = model.int("degree", default=3)
    v["layers"] = model.int_list("layers", default=[1, 8, 1])
    clamp = model.float_list("output_clamp", default=None)
    if clamp is not None and len(clamp) != 2:
        raise ConfigError("[model] output_clamp needs exactly two numbers 'a, b'")
    v["output_clamp"] = tuple(clamp) if clamp is not None else None

    prior = _SectionReader(cp, "prior")
    v["prior_kind"] = prior.str("kind", default="gaussian", choices={"gaussian", "uniform"})
    v["prior_sigma"] = prior.float("sigma", default=1.0)
    v["prior_low"] = prior.float("low", default=-1.0)
    v["prior_high"] = prior.float("high", default=1.0)
    v["zeta"] = prior.float("zeta", default=0.5 if v["prior_kind"] == "gaussian" else 0.0)

    loss = _SectionReader(cp, "loss")
    v["loss_kind"] = loss.str("kind", default=_REQUIRED,
                              choices={"squared_error", "cross_entropy"})
    v["sigma_ell"] = loss.str("sigma_ell", default="auto")
    if v["sigma_ell"] != "auto":
        try:
            v["sigma_ell"] = float(v["sigma_ell"])
        except ValueError as exc:
            raise ConfigError("[loss] sigma_ell must be 'auto' or a number") from exc

    noise = _SectionReader(cp, "noise")
    v["noise_kind"] = noise.str("kind", default="gaussian", choices={"gaussian", "bounded"})
    v["noise_sigma"] = noise.float("sigma", default=0.1)
    v["noise_half_width"] = noise.float("half_width", default=0.1)

    pk = _SectionReader(cp, "param_kernel") if cp.has_section("param_kernel") else None
    v["param_kernel_family"] = (pk.str("family", default="linear",
                                       choices={"linear", "rbf", "matern"}) if pk else "linear")
    v["param_kernel_lengthscale"] = pk.float("lengthscale", default=1.0) if pk else 1.0
    v["param_kernel_nu"] = pk.float("nu", default=2.5) if pk else 2.5
    v["param_kernel_output_scale"] = pk.float("output_scale", default=1.0) if pk else 1.0

    pos = _SectionReader(cp, "posterior_kernel") if cp.has_section("posterior_kernel") else None
    v["posterior_kind"] = (pos.str("kind", default="induced",
                                   choices={"induced", "reference"}) if pos else "induced")
    v["reference_family"] = (pos.str("family", default="matern",
                                     choices={"rbf", "matern"}) if pos else "matern")
    v["reference_lengthscale"] = pos.float("lengthscale", default=1.0) if pos else 1.0
    v["reference_nu"] = pos.float("nu", default=2.5) if pos else 2.5
    v["reference_output_scale"] = pos.float("output_scale", default=1.0) if pos else 1.0
    v["domination_scale"] = pos.str("domination_scale", default="auto") if pos else "auto"
    if v["domination_scale"] != "auto":
        try:
            v["domination_scale"] = float(v["domination_scale"])
        except ValueError as exc:
            raise ConfigError("[posterior_kernel] domination_scale must be 'auto' or a number") from exc
    v["quadrature_samples"] = pos.int("quadrature_samples", default=2048) if pos else 2048

    train = _SectionReader(cp, "train")
    v["schedule"] = train.str("schedule", default="log_power",
                              choices={"log_power", "constant"})
    v["q"] = train.float("q", default=2.0)
    v["schedule_scale"] = train.float("scale", default=1.0)
    v["lambda_const"] = train.float("lambda", default=1.0)
    v["solver"] = train.str("solver", default="auto",
                            choices={"auto", "ridge", "newton", "gd"})
    v["max_iter"] = train.int("max_iter", default=100)
    v["grad_tol"] = train.float("grad_tol", default=1e-9)
    v["step_size"] = train.float("step_size", default=0.01)

    pol = _SectionReader(cp, "policy") if cp.has_section("policy") else None
    v["policy"] = (pol.str("name", default="ts_randomized",
                           choices={"ts_randomized", "ucb", "lfbo_ce"}) if pol else "ts_randomized")
    v["ucb_beta"] = pol.float("ucb_beta", default=2.0) if pol else 2.0
    v["lfbo_quantile"] = pol.float("lfbo_quantile", default=0.8) if pol else 0.8
    v["on_nonconvergence"] = (pol.str("on_nonconvergence", default="continue",
                                      choices={"continue", "abort"}) if pol else "continue")

    sb = _SectionReader(cp, "smallball") if cp.has_section("smallball") else None
    v["smallball_n_samples"] = sb.int("n_samples", default=100_000) if sb else 100_000
    v["smallball_radii"] = sb.float_list("radii", default=None) if sb else None
    v["smallball_n_radii"] = sb.int("n_radii", default=5) if sb else 5
    v["smallball_quantile_lo"] = sb.float("quantile_lo", default=0.002) if sb else 0.002
    v["smallball_quantile_hi"] = sb.float("quantile_hi", default=0.02) if sb else 0.02

    if v["loss_kind"] == "cross_entropy" and v["output_clamp"] is None:
        raise ConfigError(
            "[loss] cross_entropy requires [model] output_clamp to keep "
            "predictions inside (0, 1)"
        )
    if v["policy"] == "lfbo_ce" and v["loss_kind"] != "cross_entropy":
        raise ConfigError("[policy] lfbo_ce requires [loss] kind = cross_entropy")

    return ExperimentSpec(raw_text=text, values=v)


def load_config(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_grid(spec: ExperimentSpec) -> DomainGrid:
    v = spec.values
    if v["grid_kind"] == "linspace":
        if v["grid_dim"] != 1:
            raise ConfigError("[grid] linspace grids are one-dimensional")
        return DomainGrid.linspace(v["grid_low"], v["grid_high"], v["grid_m"])
    seed = v["grid_seed"] if v["grid_seed"] is not None else v["seed"]
    rng = substream(seed, 10)
    return DomainGrid.uniform(v["grid_m"], v["grid_dim"], rng,
                              low=v["grid_low"], high=v["grid_high"])


def build_model(spec: ExperimentSpec, grid: DomainGrid):
    v = spec.values
    if v["model_kind"] == "mlp":
        layers = list(v["layers"])
        if layers[0] != grid.dim:
            raise ConfigError(
                f"[model] layers[0]={layers[0]} must equal the grid dimension {grid.dim}")
        return SmoothMLP(layers, output_clamp=v["output_clamp"])
    fm_name = v["feature_map"]
    if fm_name == "random_fourier":
        fseed = (v["feature_seed"] if v["feature_seed"] is not None
                 else derive_seed(v["seed"], 11))
        fm = RandomFourierFeatureMap(v["n_features"], grid.dim,
                                     lengthscale=v["feature_lengthscale"],
                                     seed=fseed)
    elif fm_name == "polynomial":
        if grid.dim != 1:
            raise ConfigError("[model] polynomial features need a 1-D grid")
        fm = PolynomialFeatureMap(v["degree"])
    elif fm_name == "one_hot":
        fm = OneHotFeatureMap(grid)
    else:
        fm = IdentityFeatureMap(grid.dim)
    return LinearFeatureModel(fm, output_clamp=v["output_clamp"])


def build_prior(spec: ExperimentSpec, param_dim: int, seed: int):
    v = spec.values
    if v["prior_kind"] == "gaussian":
        return GaussianIsoPrior(param_dim, sigma=v["prior_sigma"], seed=seed)
    return UniformBoxPrior(param_dim, low=v["prior_low"], high=v["prior_high"], seed=seed)


def build_loss(spec: ExperimentSpec):
    v = spec.values
    if v["loss_kind"] == "squared_error":
        return SquaredErrorLoss()
    return CrossEntropyLoss(domain_interval=v["output_clamp"])


def build_noise(spec: ExperimentSpec):
    v = spec.values
    if v["noise_kind"] == "gaussian":
        return GaussianNoise(v["noise_sigma"])
    return BoundedNoise(v["noise_half_width"])


def build_param_kernel(spec: ExperimentSpec):
    v = spec.values
    fam = v["param_kernel_family"]
    if fam == "linear":
        return LinearKernel()
    if fam == "rbf":
        return RBFKernel(lengthscale=v["param_kernel_lengthscale"],
                         output_scale=v["param_kernel_output_scale"])
    return MaternKernel(lengthscale=v["param_kernel_lengthscale"],
                        nu=v["param_kernel_nu"],
                        output_scale=v["param_kernel_output_scale"])


def build_reference_kernel(spec: ExperimentSpec):
    v = spec.values
    if v["reference_family"] == "rbf":
        return RBFKernel(lengthscale=v["reference_lengthscale"],
                         output_scale=v["reference_output_scale"])
    return MaternKernel(lengthscale=v["reference_lengthscale"],
                        nu=v["reference_nu"],
                        output_scale=v["reference_output_scale"])


def build_induced_kernel(spec: ExperimentSpec, model, param_kernel, grid):
    v = spec.values
    if getattr(model, "is_linear_feature", False) and isinstance(param_kernel, LinearKernel):
        return InducedKernel(model, param_kernel, mode="exact", grid=grid)
    measure = build_prior(spec, model.param_dim, seed=derive_seed(v["seed"], 12))
    return InducedKernel(model, param_kernel, mode="quadrature",
                         quadrature_measure=measure,
                         quadrature_samples=v["quadrature_samples"],
                         seed=derive_seed(v["seed"], 13), grid=grid)


def build_schedule(spec: ExperimentSpec):
    v = spec.values
    if v["schedule"] == "constant":
        return ConstantSchedule(v["lambda_const"])
    return LogPowerSchedule(q=v["q"], scale=v["schedule_scale"])


def build_policy(spec: ExperimentSpec) -> PolicyConfig:
    v = spec.values
    return PolicyConfig(name=v["policy"], ucb_beta=v["ucb_beta"],
                        lfbo_quantile=v["lfbo_quantile"],
                        on_nonconvergence=v["on_nonconvergence"])


def build_surrogate(spec: ExperimentSpec, model, loss, schedule, prior, param_kernel):
    v = spec.values
    return RandomizedRidgeSurrogate(
        model=model, loss=loss, schedule=schedule, prior=prior,
        param_kernel=param_kernel, solver=v["solver"], max_iter=v["max_iter"],
        grad_tol=v["grad_tol"], step_size=v["step_size"])


def build_environment(spec: ExperimentSpec, grid, model, rep: int):
    v = spec.values
    env_prior = build_prior(spec, model.param_dim, seed=derive_seed(v["seed"], 20))
    rng = substream(v["seed"], 21, rep)
    return Environment(grid, model, env_prior, build_noise(spec), rng,
                       gap_floor=v["gap_floor"])
