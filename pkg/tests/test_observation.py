"""
Test script for the meter-reading model: quantiles, Sobol streams, samplers
and likelihoods.
"""
import sys
import os

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

# Add the parent directory to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.exceptions import DimensionMismatchError, MissingPosteriorError, ModelValidationError
from models.models import ObservationCase, ObsScenario
from services.observation_service import (
    QmcStream,
    broken_log_likelihood,
    inv_norm_cdf,
    likelihood,
    likelihood_batch,
    sample_components,
    sample_reading,
    sample_reading_batch,
    sigma_to_snr,
    snr_to_sigma,
)
from services.variational_service import exact_log_q1


def case_a(snr_db=0.0):
    return ObsScenario.from_snr(ObservationCase.A, snr_db)


def test_inv_norm_cdf_against_scipy():
    print("📈 Testing normal quantile...")
    assert inv_norm_cdf(0.5) == pytest.approx(0.0, abs=1e-14)
    assert inv_norm_cdf(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    u = np.concatenate([np.logspace(-12, -1, 40), np.linspace(0.1, 0.9, 41), 1 - np.logspace(-12, -1, 40)])
    assert np.allclose(inv_norm_cdf(u), norm.ppf(u), rtol=1e-9, atol=1e-9)
    central = np.linspace(0.05, 0.95, 19)
    assert np.allclose(inv_norm_cdf(central), -inv_norm_cdf(1 - central), atol=1e-12)


def test_inv_norm_cdf_domain():
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ModelValidationError):
            inv_norm_cdf(bad)


def test_snr_conversion():
    assert snr_to_sigma(1.0, 0.0) == pytest.approx(1.0)
    assert snr_to_sigma(1.0, 20.0) == pytest.approx(0.1)
    assert snr_to_sigma(1.0, -5.0) == pytest.approx(1.778, abs=1e-3)
    assert sigma_to_snr(1.0, snr_to_sigma(1.0, 5.0)) == pytest.approx(5.0)


def test_qmc_stream_offsets():
    print("🔢 Testing Sobol streams...")
    full = QmcStream(4).take(16)
    assert not np.any(np.all(full == 0.0, axis=1))
    assert np.all((full > 0.0) & (full < 1.0))
    assert np.array_equal(QmcStream(4, start=5).take(6), full[5:11])

    stream = QmcStream(4)
    stream.skip(3)
    assert np.array_equal(stream.take(2), full[3:5])
    assert stream.index == 5
    assert np.array_equal(QmcStream(4).substream(7).take(1), full[7:8])


def test_scenario_dimensions():
    a = case_a()
    d_scn = ObsScenario.from_snr(ObservationCase.D, 0.0, d=2)
    assert a.reading_length == 10 and a.point_dimension == 11
    assert d_scn.reading_length == 14 and d_scn.point_dimension == 17
    mask = d_scn.window_mask()
    assert mask.shape == (5, 14)
    assert mask.sum(axis=1).tolist() == [10] * 5
    assert mask[0, :10].all() and mask[4, 4:].all()
    with pytest.raises(ValueError):
        ObsScenario(y=(5.0,) * 14, sigma=1.0, nu0=1.0, d=2, m=10, case=ObservationCase.A)


def test_batch_sampler_matches_single():
    scn = ObsScenario.from_snr(ObservationCase.D, 0.0, d=2)
    points = QmcStream(scn.point_dimension).take(8)
    batch = sample_reading_batch(scn, 0.6, points)
    for row, point in zip(batch, points):
        assert np.allclose(row, sample_reading(scn, 0.6, point))


def test_working_reading_is_shifted():
    scn = case_a(40.0)
    points = QmcStream(scn.point_dimension).take(32)
    sample = sample_components(scn, points)
    assert np.allclose(sample.broken - sample.working, scn.nu0)
    # belief 1 always draws the working branch, belief 0 the broken one
    assert np.allclose(sample_reading_batch(scn, 1.0, points), sample.working)
    assert np.allclose(sample_reading_batch(scn, 0.0, points), sample.broken)


def test_case_a_likelihood_closed_form():
    print("📐 Testing case A likelihood...")
    scn = case_a()
    x = np.linspace(3.5, 5.5, scn.reading_length)
    pair = likelihood(scn, x)
    assert pair.log_q0 == pytest.approx(norm.logpdf(x, 5.0, scn.sigma).sum())
    assert pair.log_q1 == pytest.approx(norm.logpdf(x, 4.0, scn.sigma).sum())

    log_q0, log_q1 = likelihood_batch(scn, np.vstack([x, x]), sigma=np.array([1.0, 2.0]))
    assert log_q0[1] == pytest.approx(norm.logpdf(x, 5.0, 2.0).sum())
    assert log_q1[1] == pytest.approx(norm.logpdf(x, 4.0, 2.0).sum())


def test_likelihood_errors():
    scn = ObsScenario.from_snr(ObservationCase.B, 0.0, d=2)
    with pytest.raises(MissingPosteriorError):
        likelihood(scn, np.full(scn.reading_length, 5.0))
    with pytest.raises(DimensionMismatchError):
        likelihood_batch(case_a(), np.zeros((2, 7)))
    with pytest.raises(DimensionMismatchError):
        sample_components(case_a(), np.full((2, 5), 0.5))



def test_densities_integrate_to_one():
    print("∫ Testing likelihood normalization...")
    scn = ObsScenario.from_snr(ObservationCase.A, 0.0, m=2)
    axis = np.linspace(-3.0, 12.0, 601)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    log_q0, log_q1 = likelihood_batch(scn, np.column_stack([gx.ravel(), gy.ravel()]))
    for log_q in (log_q0, log_q1):
        mass = trapezoid(trapezoid(np.exp(log_q).reshape(gx.shape), axis, axis=1), axis)
        assert mass == pytest.approx(1.0, abs=1e-6)

    # random shed: prior-marginal Q1 of a single reading
    shed = ObsScenario.from_snr(ObservationCase.C, 0.0, m=1)
    xs = np.linspace(-4.0, 12.0, 801)
    density = np.exp([exact_log_q1(shed, np.array([x]), grid_points=2001) for x in xs])
    assert trapezoid(density, xs) == pytest.approx(1.0, abs=1e-4)


def test_sobol_sample_means():
    print("🎯 Testing Sobol sample means...")
    count = 4096
    scn = ObsScenario.from_snr(ObservationCase.C, 0.0)
    sample = sample_components(scn, QmcStream(scn.point_dimension).take(count))
    shed_sd = 1.0 / np.sqrt(scn.eta0)
    assert abs(sample.shed.mean() - scn.nu0) < 3 * shed_sd / np.sqrt(count)
    assert np.all(np.abs(sample.broken.mean(axis=0) - scn.baseline) < 3 * scn.sigma / np.sqrt(count))
    working_sd = np.sqrt(scn.sigma ** 2 + shed_sd ** 2)
    assert np.all(np.abs(sample.working.mean(axis=0) - (scn.baseline - scn.nu0)) < 3 * working_sd / np.sqrt(count))

    b = 0.5
    mixture = sample_reading_batch(scn, b, QmcStream(scn.point_dimension).take(count))
    mixture_sd = np.sqrt(working_sd ** 2 + b * (1 - b) * scn.nu0 ** 2)
    assert np.all(np.abs(mixture.mean(axis=0) - (scn.baseline - b * scn.nu0)) < 3 * mixture_sd / np.sqrt(count))


def test_likelihood_exchangeable_across_meters():
    rng = np.random.default_rng(11)
    order = rng.permutation(10)

    # without clock offset every reading sits in the shed window
    for case in (ObservationCase.A, ObservationCase.C):
        scn = ObsScenario.from_snr(case, 0.0)
        x = 5.0 + rng.normal(size=(3, scn.reading_length)) - 0.5
        log_q0, log_q1 = likelihood_batch(scn, x)
        perm_q0, perm_q1 = likelihood_batch(scn, x[:, order])
        assert np.allclose(perm_q0, log_q0, rtol=1e-10, atol=1e-10)
        assert np.allclose(perm_q1, log_q1, rtol=1e-8, atol=1e-8)

    # with offsets only the slots inside every window are interchangeable
    scn = ObsScenario.from_snr(ObservationCase.D, 0.0, d=2)
    x = 5.0 + rng.normal(size=scn.reading_length) - 0.5
    core = np.arange(2 * scn.d, scn.m)
    shuffled = x.copy()
    shuffled[core] = x[rng.permutation(core)]
    assert exact_log_q1(scn, shuffled) == pytest.approx(exact_log_q1(scn, x), abs=1e-9)
    # the broken-branch density ignores the window entirely
    full = x[rng.permutation(scn.reading_length)]
    assert broken_log_likelihood(scn, full[None, :])[0] == pytest.approx(broken_log_likelihood(scn, x[None, :])[0])

if __name__ == "__main__":
    test_inv_norm_cdf_against_scipy()
    test_inv_norm_cdf_domain()
    test_snr_conversion()
    test_qmc_stream_offsets()
    test_scenario_dimensions()
    test_batch_sampler_matches_single()
    test_working_reading_is_shifted()
    test_case_a_likelihood_closed_form()
    test_likelihood_errors()
    test_densities_integrate_to_one()
    test_sobol_sample_means()
    test_likelihood_exchangeable_across_meters()
    print("\n🎉 Observation model tests completed!")
