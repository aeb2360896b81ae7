"""Shared fixtures. The expensive pipeline objects (synthesized data,
stagewise initialization, reduced-budget chains) are session-scoped so the
acceptance criteria and unit tests share single runs."""

import numpy as np
import pytest

from daebayes.config import RunConfig
from daebayes.grid import builtin_case_ieee9
from daebayes.params import default_priors, to_physical
from daebayes.dae import DaeModel, SolverConfig, solve_equilibrium
from daebayes.experiments import SynthesisConfig, default_experiments_ieee9, draw_truth, synthesize
from daebayes.likelihood import Posterior
from daebayes.pipeline import build_pipeline, initialize
from daebayes.sampler import run_chain, run_decoupled
from daebayes.identify import curvature_report

MONITORED = (2, 4, 5, 6, 7, 8, 9)
SEED = 7


@pytest.fixture(scope="session")
def case9():
    return builtin_case_ieee9()


@pytest.fixture(scope="session")
def prior9(case9):
    return default_priors(case9)


@pytest.fixture(scope="session")
def model9(case9, prior9):
    theta = prior9.split(to_physical(np.zeros(prior9.n_theta), prior9))
    return DaeModel(case9, theta, MONITORED)


@pytest.fixture(scope="session")
def op9(model9):
    return solve_equilibrium(model9)


@pytest.fixture(scope="session")
def pipe7():
    """Default short-budget pipeline: seed 7, synthesized measurements."""
    return build_pipeline(RunConfig(budget="short", seed=SEED).validated())


@pytest.fixture(scope="session")
def posterior7(pipe7):
    return pipe7.posterior


@pytest.fixture(scope="session")
def pipe_clean():
    """Noiseless twin of the default pipeline (infinite SNR)."""
    cfg = RunConfig(budget="short", seed=SEED, snr_db=float("inf")).validated()
    return build_pipeline(cfg)


@pytest.fixture(scope="session")
def curvature0(posterior7):
    """Curvature report at eta = 0 (2 n_theta exact forward solves)."""
    return curvature_report(posterior7, np.zeros(posterior7.prior.n_theta))


@pytest.fixture(scope="session")
def init7(pipe7):
    """Stagewise initialization (eta0, H0) on the default data."""
    return initialize(pipe7)


@pytest.fixture(scope="session")
def da500(pipe7, init7):
    """Reduced-budget (500-iteration) blocked delayed-acceptance run."""
    eta0, H0 = init7
    return run_chain(pipe7.posterior, pipe7.config.chain_config(), SEED,
                     eta0, H0, theta_true=pipe7.theta_true, label="accept-da")


@pytest.fixture(scope="session")
def exact500(pipe7, init7):
    """Matched-budget blocked exact-only run."""
    from dataclasses import replace
    eta0, H0 = init7
    cfg = replace(pipe7.config.chain_config(), kernel="exact")
    return run_chain(pipe7.posterior, cfg, SEED, eta0, H0,
                     theta_true=pipe7.theta_true, label="accept-eo")


@pytest.fixture(scope="session")
def decoupled500(pipe7):
    """Decoupled generator-block run: network classes frozen at nominal."""
    eta0, H0 = initialize(pipe7, ("res", "rea"))
    return run_decoupled(pipe7.posterior, pipe7.config.chain_config(), SEED,
                         eta0, H0, ("res", "rea"), pipe7.theta_true)
