"""Config file parsing and schema validation.

Config files are TOML with three sections:

``[model]``
    family, sigma, dim, params.* (numbers), init.kind/mean/var.
``[sim]``
    scheme, n, p, tau, substeps, t_end, seed, replicas.
``[experiment]``
    kind plus kind-specific keys, validated by the harness.

Schema violations raise ConfigError (CLI exit code 2).  Unknown keys are
rejected rather than ignored so typos cannot silently change a run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, ValidationError
from .models import InitialLaw, ModelSpec
from .sim import SimConfig

_MODEL_KEYS = {"family", "sigma", "dim", "params", "init"}
_INIT_KEYS = {"kind", "mean", "var"}
_SIM_KEYS = {"scheme", "n", "p", "tau", "substeps", "t_end", "seed", "replicas"}


@dataclass(frozen=True)
class AppConfig:
    model: Optional[ModelSpec]
    sim: Optional[SimConfig]
    experiment: dict

    def with_seed(self, seed: int) -> "AppConfig":
        """Copy with every seed replaced (CLI --seed override)."""
        sim = self.sim
        if sim is not None:
            sim = SimConfig(
                scheme=sim.scheme,
                n=sim.n,
                p=sim.p,
                tau=sim.tau,
                substeps=sim.substeps,
                t_end=sim.t_end,
                seed=seed,
                replicas=sim.replicas,
            )
        exp = dict(self.experiment)
        if "seed" in exp:
            exp["seed"] = seed
        return AppConfig(model=self.model, sim=sim, experiment=exp)


def _reject_unknown(section: str, table: dict, allowed: set) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")


def _number(section: str, table: dict, key: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"[{section}] requires key {key!r}")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}].{key} must be a number, got {val!r}")
    return val


def _integer(section: str, table: dict, key: str, default=None, required=False):
    val = _number(section, table, key, default=default, required=required)
    if val is not None and not isinstance(val, int):
        raise ConfigError(f"[{section}].{key} must be an integer, got {val!r}")
    return val


def _string(section: str, table: dict, key: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"[{section}] requires key {key!r}")
        return default
    val = table[key]
    if not isinstance(val, str):
        raise ConfigError(f"[{section}].{key} must be a string, got {val!r}")
    return val


def _parse_model(table: dict) -> ModelSpec:
    if not isinstance(table, dict):
        raise ConfigError("[model] must be a table")
    _reject_unknown("model", table, _MODEL_KEYS)
    family = _string("model", table, "family", required=True)
    sigma = _number("model", table, "sigma", default=1.0)
    dim = _integer("model", table, "dim", default=1)
    params = table.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[model.params] must be a table")
    for key, val in params.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"[model.params].{key} must be a number, got {val!r}")
    init_table = table.get("init", {})
    if not isinstance(init_table, dict):
        raise ConfigError("[model.init] must be a table")
    _reject_unknown("model.init", init_table, _INIT_KEYS)
    try:
        init = InitialLaw(
            kind=_string("model.init", init_table, "kind", default="gaussian"),
            mean=float(_number("model.init", init_table, "mean", default=0.0)),
            var=float(_number("model.init", init_table, "var", default=1.0)),
        )
        return ModelSpec(
            family=family,
            params={k: float(v) for k, v in params.items()},
            sigma=float(sigma),
            dim=int(dim),
            init=init,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_sim(table: dict) -> SimConfig:
    if not isinstance(table, dict):
        raise ConfigError("[sim] must be a table")
    _reject_unknown("sim", table, _SIM_KEYS)
    try:
        return SimConfig(
            scheme=_string("sim", table, "scheme", required=True),
            n=_integer("sim", table, "n", required=True),
            p=_integer("sim", table, "p"),
            tau=float(_number("sim", table, "tau", required=True)),
            substeps=_integer("sim", table, "substeps", default=1),
            t_end=float(_number("sim", table, "t_end", required=True)),
            seed=_integer("sim", table, "seed", default=0),
            replicas=_integer("sim", table, "replicas", default=1),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(data: dict) -> AppConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    unknown = set(data) - {"model", "sim", "experiment"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    experiment = data.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("[experiment] must be a table")
    return AppConfig(
        model=_parse_model(data["model"]) if "model" in data else None,
        sim=_parse_sim(data["sim"]) if "sim" in data else None,
        experiment=dict(experiment),
    )


def load_config(path) -> AppConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return parse_config(data)
