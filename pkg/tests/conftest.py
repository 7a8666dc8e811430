import json

import numpy as np
import pytest

from src.distributions import UNIFORM, Distribution, Instance, random_piecewise_linear


def random_instances(count: int, max_knots: int = 8, seed: int = 2024):
    """Seeded instances with 2..max_knots knots per side."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(count):
        buyer = random_piecewise_linear(rng, int(rng.integers(2, max_knots + 1)), min_gap=0.01)
        seller = random_piecewise_linear(rng, int(rng.integers(2, max_knots + 1)), min_gap=0.01)
        instances.append(Instance(buyer, seller))
    return instances


@pytest.fixture
def uniform() -> Distribution:
    return UNIFORM


@pytest.fixture
def uniform_instance() -> Instance:
    return Instance(UNIFORM, UNIFORM)


@pytest.fixture
def skewed_instance() -> Instance:
    buyer = Distribution(((0.0, 0.0), (0.3, 0.1), (0.7, 0.6), (1.0, 1.0)))
    seller = Distribution(((0.0, 0.0), (0.2, 0.5), (0.6, 0.8), (1.0, 1.0)))
    return Instance(buyer, seller)


@pytest.fixture
def write_instance(tmp_path):
    """Write an instance dict to a JSON file and return its path."""
    def _write(obj, name='instance.json'):
        path = tmp_path / name
        path.write_text(json.dumps(obj))
        return str(path)
    return _write


@pytest.fixture
def uniform_json():
    unit = {'type': 'piecewise_linear_cdf', 'knots': [[0, 0], [1, 1]]}
    return {'buyer': dict(unit), 'seller': dict(unit)}
