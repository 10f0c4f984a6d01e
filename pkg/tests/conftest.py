import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skewmem.weights import WeightField, build_membranes, constant_density

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def flat_field():
    return WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 1.0}), constant_density(3))


@pytest.fixture
def one_membrane_field():
    return WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 2.0}), constant_density(3))


def fd_grad(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = h
        out[..., j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out
