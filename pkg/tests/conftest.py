"""Shared fixtures: a small synthetic dataset and the Malawi-shaped CSV corpus."""

from pathlib import Path

import numpy as np
import pytest

from sglmm.model import Hyper, ModelSpec
from sglmm.sampler import SamplerConfig, run
from sglmm.simulate import SynthSpec, generate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def small_synth():
    """Tiny spatial-gamma problem (n=12, J=2, k=3, r=3) for fast unit tests."""
    rng = np.random.default_rng(7)
    beta = rng.normal(0.0, 0.4, (3, 2))
    beta[0, :] = 1.5
    spec = SynthSpec(
        n=12, J=2, k=3, graph="lattice", family="gamma",
        true_beta=beta, true_sigma2=0.5, true_theta=0.8, r=3, seed=123,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def small_nonspatial():
    """Non-spatial gamma problem for tests that skip the random effects."""
    rng = np.random.default_rng(11)
    beta = rng.normal(0.0, 0.4, (3, 2))
    beta[0, :] = 1.5
    spec = SynthSpec(
        n=12, J=2, k=3, graph="lattice", family="gamma",
        true_beta=beta, true_sigma2=1.0, true_theta=0.6, r=0, seed=321,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def small_fit(small_synth):
    """A short but usable posterior for the small spatial problem.

    Shared across compare/scenario/diagnostics tests; 2 chains keeps the
    Gelman-Rubin paths exercised without paying for a third.
    """
    import dataclasses

    model = dataclasses.replace(small_synth.model, hyper=Hyper(s2_beta=100.0))
    cfg = SamplerConfig(
        n_iter=6_000, thin=5, keep=600, n_chains=2, seed=5,
    )
    draws = run(model, small_synth.dataset, small_synth.basis, cfg)
    return model, small_synth.dataset, small_synth.basis, cfg, draws


@pytest.fixture(scope="session")
def nonspatial_fit(small_nonspatial):
    import dataclasses

    model = dataclasses.replace(small_nonspatial.model, hyper=Hyper(s2_beta=100.0))
    cfg = SamplerConfig(n_iter=4_000, thin=4, keep=500, n_chains=2, seed=9)
    draws = run(model, small_nonspatial.dataset, None, cfg)
    return model, small_nonspatial.dataset, None, cfg, draws
