"""Shared fixtures.  The production blow-up runs are expensive, so they are
computed once per session and shared between the unit and acceptance tests."""

import pytest

from singular_euler.sector import make_sector_config
from singular_euler.si_euler import run_blowup


@pytest.fixture(scope="session")
def cfg3():
    return make_sector_config(3, 0.5, "blowup")


@pytest.fixture(scope="session")
def blowup_2048(cfg3):
    return run_blowup(cfg3, N=2048, dt0=2e-3)


@pytest.fixture(scope="session")
def blowup_1024(cfg3):
    return run_blowup(cfg3, N=1024, dt0=2e-3)


@pytest.fixture(scope="session")
def blowup_4096(cfg3):
    return run_blowup(cfg3, N=4096, dt0=2e-3)


@pytest.fixture(scope="session")
def calibration(cfg3):
    from singular_euler.biot_savart import calibrate_kernel_constants

    return calibrate_kernel_constants(cfg3)


@pytest.fixture(scope="session")
def envelope(cfg3):
    from singular_euler.biot_savart import envelope_field, smoothstep_cutoff

    return envelope_field(0.5, smoothstep_cutoff(0.5, 1.0))


@pytest.fixture(scope="session")
def lemma_checks(calibration, envelope):
    from singular_euler.biot_savart import verify_linear_growth, weighted_derivative_refinement

    _, cfg = calibration
    return verify_linear_growth(envelope, cfg), weighted_derivative_refinement(envelope, cfg)
