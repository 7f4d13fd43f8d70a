import numpy as np
import pytest

from bbmlab.rng import ParticleStream


def test_streams_are_deterministic():
    a = ParticleStream(42, 3, 17)
    b = ParticleStream(42, 3, 17)
    assert [a.uniform() for _ in range(8)] == [b.uniform() for _ in range(8)]


@pytest.mark.parametrize("other", [(43, 3, 17), (42, 4, 17), (42, 3, 18)])
def test_any_key_component_separates_streams(other):
    base = [ParticleStream(42, 3, 17).uniform() for _ in range(4)]
    alt = ParticleStream(*other)
    assert base != [alt.uniform() for _ in range(4)]


def test_uniform_range_and_moments():
    s = ParticleStream(7)
    xs = np.array([s.uniform() for _ in range(20_000)])
    assert np.all((xs >= 0.0) & (xs < 1.0))
    assert abs(xs.mean() - 0.5) < 0.01
    assert abs(xs.var() - 1.0 / 12.0) < 0.005


def test_normal_moments():
    s = ParticleStream(11)
    xs = np.array([s.normal() for _ in range(20_000)])
    assert abs(xs.mean()) < 0.03
    assert abs(xs.std() - 1.0) < 0.03


def test_exponential_rate():
    s = ParticleStream(13)
    xs = np.array([s.exponential(2.0) for _ in range(20_000)])
    assert np.all(xs > 0.0)
    assert xs.mean() == pytest.approx(0.5, abs=0.02)
