"""Model registry: confining drifts, interaction kernels, initial laws.

A model bundles a per-particle drift ``drift(x)``, a pairwise interaction
kernel ``kernel(z)`` evaluated on differences z = x_i - x_j, a diffusion
strength sigma, the ambient dimension, and the initial law.  Families are
registered by name so configuration files can select them; parameters are
plain floats.

Shapes: ``drift`` and ``kernel`` map (..., d) -> (..., d) and must be
vectorized over leading axes.  ``kernel_pair_sum``, when a family provides
one, computes sum_{j != i} kernel(x_i - x_j) for coords of shape
(..., n, d) in O(n) instead of O(n^2); it must agree with the direct sum
to rounding error and exists so that very large reference ensembles stay
affordable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError, ValidationError
from .rng import stream


@dataclass(frozen=True)
class InitialLaw:
    """Initial particle distribution (iid across particles and coordinates).

    kind: "gaussian" (mean, variance) or "uniform" (mean, half-width via
    ``var`` interpreted as the half-width of the support).  Both have
    sub-gaussian tails, which the moment-growth experiments rely on.
    """

    kind: str = "gaussian"
    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValidationError(f"unknown initial law kind: {self.kind!r}")
        if self.var < 0:
            raise ValidationError("initial law scale must be >= 0")

    def sample(self, count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean + math.sqrt(self.var) * rng.standard_normal((count, dim))
        return rng.uniform(self.mean - self.var, self.mean + self.var, size=(count, dim))


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a model, as it appears in config files."""

    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    sigma: float = 1.0
    dim: int = 1
    init: InitialLaw = field(default_factory=InitialLaw)


@dataclass(frozen=True)
class Model:
    """Built model: callables plus metadata.  Construct via build_model()."""

    family: str
    params: Mapping[str, float]
    sigma: float
    dim: int
    init: InitialLaw
    drift: Callable[[np.ndarray], np.ndarray]
    kernel: Callable[[np.ndarray], np.ndarray]
    kernel_pair_sum: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # Known bound L with (x-y).(drift(x)-drift(y)) <= L|x-y|^2, if any.
    one_sided_lipschitz: Optional[float] = None


_REGISTRY: dict[str, Callable[[ModelSpec], Model]] = {}


def register_family(name: str, builder: Callable[[ModelSpec], Model]) -> None:
    if name in _REGISTRY:
        raise ValidationError(f"model family {name!r} already registered")
    _REGISTRY[name] = builder


def registered_families() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def build_model(spec: ModelSpec) -> Model:
    """Instantiate the callables for a spec.

    Raises ConfigError for an unknown family and ValidationError for
    parameter values outside the family's domain.
    """
    if spec.sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if spec.dim < 1:
        raise ValidationError("dim must be >= 1")
    try:
        builder = _REGISTRY[spec.family]
    except KeyError:
        raise ConfigError(
            f"unknown model family {spec.family!r}; registered: {registered_families()}"
        ) from None
    return builder(spec)


def _param(spec: ModelSpec, name: str, default=None) -> float:
    if name in spec.params:
        return float(spec.params[name])
    if default is None:
        raise ValidationError(f"family {spec.family!r} requires parameter {name!r}")
    return float(default)


def _build_linear(spec: ModelSpec) -> Model:
    # drift = -a x, kernel = -kappa z.  Gaussian-preserving, used by the
    # closed-form covariance oracles.
    a = _param(spec, "a")
    kappa = _param(spec, "kappa")
    if a < 0 or kappa < 0:
        raise ValidationError("linear family needs a >= 0 and kappa >= 0")

    def pair_sum(coords: np.ndarray) -> np.ndarray:
        n = coords.shape[-2]
        total = coords.sum(axis=-2, keepdims=True)
        return -kappa * (n * coords - total)

    return Model(
        family="linear",
        params={"a": a, "kappa": kappa},
        sigma=spec.sigma,
        dim=spec.dim,
        init=spec.init,
        drift=lambda x: -a * x,
        kernel=lambda z: -kappa * z,
        kernel_pair_sum=pair_sum,
        one_sided_lipschitz=-a,
    )


def _build_sine(spec: ModelSpec) -> Model:
    # drift = -x, kernel = -sin(z); one-dimensional.  The pair sum uses
    # sum_j sin(x_i - x_j) = sin(x_i) C - cos(x_i) S with C = sum cos(x_j),
    # S = sum sin(x_j), then removes the j = i term (which is zero anyway
    # but keeps the identity exact as written).
    if spec.dim != 1:
        raise ValidationError("sine family is one-dimensional")
    if spec.params and set(spec.params) - {"a"}:
        raise ValidationError(f"sine family takes no parameters besides 'a': {spec.params}")
    a = _param(spec, "a", 1.0)
    if a < 0:
        raise ValidationError("sine family needs a >= 0")

    def pair_sum(coords: np.ndarray) -> np.ndarray:
        s = np.sin(coords)
        c = np.cos(coords)
        s_tot = s.sum(axis=-2, keepdims=True)
        c_tot = c.sum(axis=-2, keepdims=True)
        return -(s * (c_tot - c) - c * (s_tot - s))

    return Model(
        family="sine",
        params={"a": a},
        sigma=spec.sigma,
        dim=spec.dim,
        init=spec.init,
        drift=lambda x: -a * x,
        kernel=lambda z: -np.sin(z),
        kernel_pair_sum=pair_sum,
        one_sided_lipschitz=-a,
    )


def _build_cubic(spec: ModelSpec) -> Model:
    # drift = -|x|^2 x: non-globally-Lipschitz confinement whose one-sided
    # Lipschitz constant is 0.  Exercises the dissipativity probe and the
    # moment-growth checks outside the linear setting.
    kappa = _param(spec, "kappa", 0.0)
    if kappa < 0:
        raise ValidationError("cubic family needs kappa >= 0")

    def drift(x: np.ndarray) -> np.ndarray:
        return -np.sum(x * x, axis=-1, keepdims=True) * x

    def pair_sum(coords: np.ndarray) -> np.ndarray:
        n = coords.shape[-2]
        total = coords.sum(axis=-2, keepdims=True)
        return -kappa * (n * coords - total)

    return Model(
        family="cubic",
        params={"kappa": kappa},
        sigma=spec.sigma,
        dim=spec.dim,
        init=spec.init,
        drift=drift,
        kernel=lambda z: -kappa * z,
        kernel_pair_sum=pair_sum,
        one_sided_lipschitz=0.0,
    )


register_family("linear", _build_linear)
register_family("sine", _build_sine)
register_family("cubic", _build_cubic)


def probe_one_sided_lipschitz(
    model: Model,
    sample_count: int = 256,
    radius: float = 5.0,
    seed: int = 0,
) -> float:
    """Empirical max of (x-y).(drift(x)-drift(y)) / |x-y|^2 over sampled pairs.

    Points are drawn uniformly from the centered ball of the given radius.
    A lower bound on the true one-sided Lipschitz constant; useful as a
    sanity probe for newly registered families.
    """
    if sample_count < 2:
        raise ValidationError("need at least two sample points")
    rng = stream(seed, "oslip-probe")
    g = rng.standard_normal((sample_count, model.dim))
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    radii = radius * rng.random((sample_count, 1)) ** (1.0 / model.dim)
    pts = np.where(norms > 0, g / np.maximum(norms, 1e-300) * radii, 0.0)
    vals = model.drift(pts)
    dx = pts[:, None, :] - pts[None, :, :]
    dv = vals[:, None, :] - vals[None, :, :]
    sq = np.sum(dx * dx, axis=-1)
    mask = sq > 1e-24
    if not mask.any():
        raise ValidationError("all sampled pairs coincide; enlarge radius or count")
    ratio = np.sum(dx * dv, axis=-1)[mask] / sq[mask]
    return float(ratio.max())
