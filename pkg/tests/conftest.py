import hypothesis
import pytest

from rbmlab import InitialLaw, ModelSpec, build_model

# Deterministic, deadline-free hypothesis runs: several properties exercise
# numpy-heavy paths whose first call pays cache-warming costs.
hypothesis.settings.register_profile(
    "suite", deadline=None, max_examples=60, derandomize=True
)
hypothesis.settings.load_profile("suite")


def make_model(family: str, *, sigma: float = 1.0, dim: int = 1, **params):
    spec = ModelSpec(
        family=family,
        params=params,
        sigma=sigma,
        dim=dim,
        init=InitialLaw(kind="gaussian", mean=0.0, var=1.0),
    )
    return build_model(spec)


@pytest.fixture
def linear_model():
    return make_model("linear", a=1.0, kappa=0.5)


@pytest.fixture
def sine_model():
    return make_model("sine", a=1.0)
