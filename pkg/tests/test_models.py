import math

import numpy as np
import pytest

import simchf.models as models

from simchf.models import (
    ARFIMA_PRESAMPLE,
    ar1_block_sample,
    ar1_blocks,
    ar1_covariance,
    arfima_autocovariance,
    arfima_covariance,
    arfima_ma_weights,
    block_moments,
    gaussian_block_sample,
    gaussian_blocks,
    index_of_dispersion,
    invert_poisson_ar_moments,
    make_blocks,
    parameter_space,
    poisson_ar_blocks,
    poisson_ar_moments,
    simulate_blocks,
    simulate_path,
    standardized_innovations,
)
from simchf.types import (
    BlockKind,
    CommonRandomNumbers,
    DimensionError,
    Innovation,
    MeanOverflowError,
    ModelFamily,
    ModelKind,
    NonPositiveDefiniteError,
    ParameterError,
    SeedPlan,
    StationarityError,
)

AR1 = ModelFamily(kind=ModelKind.GAUSSIAN_AR1)
ARFIMA = ModelFamily(kind=ModelKind.ARFIMA)
POISSON = ModelFamily(kind=ModelKind.POISSON_AR1)


@pytest.fixture
def seeds():
    return SeedPlan(master_seed=12345)


@pytest.fixture(scope="module")
def million_crn():
    stream = SeedPlan(master_seed=777).stream(SeedPlan.SIMULATION, 0)
    return CommonRandomNumbers.draw(stream, 10**6, 3)


def _sample_moments(blocks):
    return blocks.mean(axis=0), np.cov(blocks, rowvar=False, bias=True)


def test_make_blocks_overlapping():
    """Test that blocks overlap with stride one."""
    blocks = make_blocks([1.0, 2.0, 3.0, 4.0, 5.0], 3)
    assert blocks.n == 3
    assert blocks.p == 3
    assert blocks.kind == BlockKind.OBSERVED
    np.testing.assert_array_equal(blocks.data[0], [1, 2, 3])
    np.testing.assert_array_equal(blocks.data[2], [3, 4, 5])


def test_make_blocks_single_block():
    """Test that a series of length p gives one block."""
    blocks = make_blocks([1.0, 2.0], 2)
    assert blocks.n == 1


@pytest.mark.parametrize("series, p", [([1.0, 2.0], 3), ([1.0, 2.0], 0), ([[1.0, 2.0]], 1)])
def test_make_blocks_rejects_bad_shapes(series, p):
    """Test that invalid series and block sizes are rejected."""
    with pytest.raises(DimensionError):
        make_blocks(series, p)


def test_parameter_space_defaults_to_midpoint():
    """Test that the default θ is the midpoint of Θ."""
    space = parameter_space(AR1)
    assert space.values == pytest.approx([0.0, 5.005])
    assert space.lower == [-0.99, 0.01]


def test_ar1_covariance_closed_form():
    """Test the AR(1) block covariance against its closed form."""
    moments = ar1_covariance(0.5, 1.0, 3)
    gamma0 = 1 / 0.75
    expected = gamma0 * np.array([[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
    np.testing.assert_allclose(moments.cov, expected)
    np.testing.assert_array_equal(moments.mean, np.zeros(3))


def test_ar1_covariance_white_noise():
    """Test that φ = 0 gives a scaled identity."""
    np.testing.assert_allclose(ar1_covariance(0.0, 2.0, 4).cov, 4 * np.eye(4))


@pytest.mark.parametrize("phi, sigma, error", [(1.0, 1.0, StationarityError), (-1.2, 1.0, StationarityError), (0.5, 0.0, ParameterError)])
def test_ar1_covariance_rejects_invalid(phi, sigma, error):
    """Test that nonstationary or degenerate AR(1) parameters raise."""
    with pytest.raises(error):
        ar1_covariance(phi, sigma, 3)


def test_arfima_at_zero_matches_ar1_at_zero():
    """Test that ARFIMA with d = 0 is white noise."""
    np.testing.assert_array_equal(arfima_covariance(0.0, 1.3, 4).cov, ar1_covariance(0.0, 1.3, 4).cov)


def test_arfima_autocovariance_recursion():
    """Test γ(0) and the lag ratios of the ARFIMA autocovariance."""
    d, sigma = 0.25, 1.0
    gamma = arfima_autocovariance(d, sigma, 4)
    assert gamma[0] == pytest.approx(math.gamma(1 - 2 * d) / math.gamma(1 - d) ** 2)
    assert gamma[1] / gamma[0] == pytest.approx(d / (1 - d))
    assert gamma[2] / gamma[1] == pytest.approx((1 + d) / (2 - d))


def test_arfima_antipersistent_lag_one_negative():
    """Test that negative d gives a negative lag-one covariance."""
    gamma = arfima_autocovariance(-0.3, 1.0, 3)
    assert gamma[1] < 0


@pytest.mark.parametrize("d", [0.5, -0.5, 0.7])
def test_arfima_rejects_nonstationary(d):
    """Test that |d| ≥ 1/2 raises StationarityError."""
    with pytest.raises(StationarityError):
        arfima_covariance(d, 1.0, 3)


def test_arfima_ma_weights_white_noise():
    """Test that d = 0 gives a unit impulse."""
    np.testing.assert_array_equal(arfima_ma_weights(0.0, 5), [1, 0, 0, 0, 0])


def test_arfima_ma_weights_recursion():
    """Test the first MA(∞) weights."""
    d = 0.3
    weights = arfima_ma_weights(d, 3)
    np.testing.assert_allclose(weights, [1, d, d * (1 + d) / 2])


def test_poisson_ar_moments_formulas():
    """Test Poisson-AR mean and covariances against their formulas."""
    moments = poisson_ar_moments(0.15, 0.5, 0.619, 3)
    mu = moments.mean[0]
    assert mu == pytest.approx(1.5, rel=1e-3)
    gamma_alpha = 0.619**2 / 0.75
    assert moments.cov[0, 0] == pytest.approx(mu + mu**2 * math.expm1(gamma_alpha))
    assert moments.cov[0, 1] == pytest.approx(mu**2 * math.expm1(gamma_alpha * 0.5))


def test_poisson_ar_moments_degenerate_latent_process():
    """Test that a vanishing latent process gives Poisson moments."""
    moments = poisson_ar_moments(0.4, 0.5, 1e-8, 3)
    np.testing.assert_allclose(moments.mean, math.exp(0.4) * np.ones(3))
    np.testing.assert_allclose(moments.cov, math.exp(0.4) * np.eye(3), atol=1e-12)


@pytest.mark.parametrize(
    "theta, dispersion",
    [((0.150, 0.5, 0.619), 1.0), ((-0.613, 0.5, 1.236), 10.0), ((0.373, 0.9, 0.111), 0.1)],
)
def test_index_of_dispersion_matches_table_settings(theta, dispersion):
    """Test dispersion at the standard Poisson-AR settings."""
    assert index_of_dispersion(*theta) == pytest.approx(dispersion, rel=0.01)


def test_index_of_dispersion_consistent_with_moments():
    """Test that dispersion equals (variance − mean) / mean."""
    moments = poisson_ar_moments(0.15, 0.5, 0.619, 1)
    mu = moments.mean[0]
    assert index_of_dispersion(0.15, 0.5, 0.619) == pytest.approx((moments.cov[0, 0] - mu) / mu)


def test_index_of_dispersion_vanishes_without_latent_noise():
    """Test that dispersion is zero without latent noise."""
    assert index_of_dispersion(0.0, 0.5, 1e-6) == pytest.approx(0.0, abs=1e-9)


def test_invert_poisson_ar_moments_recovers_parameters():
    """Test that moment inversion recovers θ."""
    moments = poisson_ar_moments(0.3, 0.5, 0.4, 2)
    beta, phi, sigma = invert_poisson_ar_moments(moments.mean[0], moments.cov[0, 0], moments.cov[0, 1])
    assert (beta, phi, sigma) == pytest.approx((0.3, 0.5, 0.4))


def test_block_moments_dispatch():
    """Test that block_moments dispatches on the model family."""
    assert block_moments(AR1, [0.5, 1.0], 2).cov.shape == (2, 2)
    assert block_moments(ARFIMA, [0.2, 1.0], 3).cov.shape == (3, 3)
    assert block_moments(POISSON, [0.15, 0.5, 0.619], 3).mean[0] == pytest.approx(1.5, rel=1e-3)


def test_ar1_blocks_match_moments(million_crn):
    """Test simulated AR(1) blocks against the model moments."""
    blocks = ar1_blocks(0.5, 1.0, million_crn.normals)
    mean, cov = _sample_moments(blocks)
    moments = ar1_covariance(0.5, 1.0, 3)
    np.testing.assert_allclose(mean, moments.mean, atol=0.01)
    np.testing.assert_allclose(cov, moments.cov, rtol=0.01, atol=0.01)


def test_arfima_blocks_match_moments(million_crn):
    """Test simulated ARFIMA blocks against the model moments."""
    blocks = simulate_blocks(ARFIMA, [0.25, 1.0], million_crn).data
    mean, cov = _sample_moments(blocks)
    moments = arfima_covariance(0.25, 1.0, 3)
    np.testing.assert_allclose(mean, moments.mean, atol=0.01)
    np.testing.assert_allclose(cov, moments.cov, rtol=0.01, atol=0.01)


def test_poisson_blocks_match_moments(million_crn):
    """Test simulated Poisson-AR blocks against the model moments."""
    blocks = simulate_blocks(POISSON, [0.15, 0.5, 0.619], million_crn).data
    mean, cov = _sample_moments(blocks)
    moments = poisson_ar_moments(0.15, 0.5, 0.619, 3)
    np.testing.assert_allclose(mean, moments.mean, rtol=0.01)
    np.testing.assert_allclose(cov, moments.cov, rtol=0.01, atol=0.02)


def test_poisson_lower_tail_is_zero():
    """Test that u = 0 maps to a zero count."""
    counts = poisson_ar_blocks(0.0, 0.5, 1.0, np.zeros((1, 3)), np.zeros((1, 3)))
    np.testing.assert_array_equal(counts, np.zeros((1, 3)))


def test_poisson_counts_are_nonnegative_integers(seeds):
    """Test that simulated counts are nonnegative integers."""
    crn = CommonRandomNumbers.draw(seeds.stream(SeedPlan.SIMULATION, 0), 500, 3)
    counts = simulate_blocks(POISSON, [0.15, 0.5, 0.619], crn).data
    assert counts.min() >= 0
    np.testing.assert_array_equal(counts, np.round(counts))


def test_poisson_mean_overflow():
    """Test that an overflowing Poisson mean raises MeanOverflowError."""
    with pytest.raises(MeanOverflowError):
        poisson_ar_blocks(20.0, 0.5, 1.0, np.zeros((1, 3)), np.full((1, 3), 0.5))


def test_gaussian_blocks_reject_non_pd():
    """Test that a non positive definite covariance is rejected."""
    moments = ar1_covariance(0.5, 1.0, 2).model_copy(update={"cov": np.array([[1.0, 2.0], [2.0, 1.0]])})
    with pytest.raises(NonPositiveDefiniteError):
        gaussian_blocks(moments, np.zeros((1, 2)))


def test_single_block_samplers_shapes(seeds):
    """Test the shape of single-block draws."""
    stream = seeds.stream(SeedPlan.SIMULATION, 1)
    assert ar1_block_sample(0.5, 1.0, 4, stream).shape == (4,)
    assert gaussian_block_sample(arfima_covariance(0.2, 1.0, 3), Innovation.LAPLACE, stream).shape == (3,)


def test_single_block_sampler_deterministic(seeds):
    """Test that single-block draws repeat for the same stream."""
    first = ar1_block_sample(0.5, 1.0, 3, seeds.stream(SeedPlan.SIMULATION, 2))
    second = ar1_block_sample(0.5, 1.0, 3, seeds.stream(SeedPlan.SIMULATION, 2))
    np.testing.assert_array_equal(first, second)


def test_simulate_blocks_deterministic(seeds):
    """Test that CRN block simulation is deterministic."""
    crn = CommonRandomNumbers.draw(seeds.stream(SeedPlan.SIMULATION, 0), 100, 3)
    for model, theta in [(AR1, [0.5, 1.0]), (ARFIMA, [0.3, 1.0]), (POISSON, [0.15, 0.5, 0.619])]:
        first = simulate_blocks(model, theta, crn)
        second = simulate_blocks(model, theta, crn)
        assert first.kind == BlockKind.SIMULATED
        np.testing.assert_array_equal(first.data, second.data)


def test_simulate_blocks_arfima_white_noise_scales_normals(seeds):
    """Test that ARFIMA with d = 0 scales the common normals."""
    crn = CommonRandomNumbers.draw(seeds.stream(SeedPlan.SIMULATION, 0), 50, 3)
    np.testing.assert_allclose(simulate_blocks(ARFIMA, [0.0, 2.0], crn).data, 2 * crn.normals)


@pytest.mark.parametrize("innovation", [Innovation.LAPLACE, Innovation.STUDENT_T6])
def test_standardized_innovations_unit_variance(innovation, seeds):
    """Test that non-Gaussian innovations have mean zero and unit variance."""
    draws = standardized_innovations(innovation, 10**6, seeds.stream(SeedPlan.DATA, 0))
    assert draws.mean() == pytest.approx(0.0, abs=0.01)
    assert draws.var() == pytest.approx(1.0, abs=0.02)


def test_simulate_path_ar1_variance(seeds):
    """Test the variance and lag-one correlation of a long AR(1) path."""
    path = simulate_path(AR1, [0.5, 1.0], 200_000, seeds.stream(SeedPlan.DATA, 1))
    assert path.shape == (200_000,)
    assert path.var() == pytest.approx(4 / 3, rel=0.05)
    centred = path - path.mean()
    assert np.dot(centred[:-1], centred[1:]) / np.dot(centred, centred) == pytest.approx(0.5, abs=0.02)


def test_simulate_path_deterministic(seeds):
    """Test that simulate_path repeats for the same stream."""
    first = simulate_path(POISSON, [0.15, 0.5, 0.619], 300, seeds.stream(SeedPlan.DATA, 3))
    second = simulate_path(POISSON, [0.15, 0.5, 0.619], 300, seeds.stream(SeedPlan.DATA, 3))
    np.testing.assert_array_equal(first, second)


@pytest.mark.parametrize("innovation", list(Innovation))
def test_simulate_path_arfima_innovations(innovation, seeds):
    """Test ARFIMA paths for every innovation law."""
    model = ModelFamily(kind=ModelKind.ARFIMA, innovation=innovation)
    path = simulate_path(model, [0.2, 1.0], 400, seeds.stream(SeedPlan.DATA, 4))
    assert path.shape == (400,)
    assert np.all(np.isfinite(path))


def test_simulate_path_rejects_empty(seeds):
    """Test that a zero-length path is rejected."""
    with pytest.raises(DimensionError):
        simulate_path(AR1, [0.5, 1.0], 0, seeds.stream(SeedPlan.DATA, 0))


def test_non_gaussian_innovations_only_for_arfima():
    """Test that only ARFIMA accepts non-Gaussian innovations."""
    with pytest.raises(ValueError):
        ModelFamily(kind=ModelKind.GAUSSIAN_AR1, innovation=Innovation.LAPLACE)


def test_long_gaussian_arfima_paths_keep_autocovariance(monkeypatch, seeds):
    """Beyond the Cholesky limit, paths still have the ARFIMA autocovariance."""
    monkeypatch.setattr(models, "EXACT_CHOLESKY_LIMIT", 8)
    paths = np.array([simulate_path(ARFIMA, [0.25, 1.0], 64, seeds.stream(SeedPlan.DATA, r)) for r in range(4000)])
    gamma = arfima_autocovariance(0.25, 1.0, 6)
    assert np.mean(paths[:, 10] ** 2) == pytest.approx(gamma[0], abs=0.1)
    assert np.mean(paths[:, 10] * paths[:, 11]) == pytest.approx(gamma[1], abs=0.08)
    assert np.mean(paths[:, 10] * paths[:, 15]) == pytest.approx(gamma[5], abs=0.08)


def test_long_gaussian_arfima_path_avoids_dense_factor(monkeypatch, seeds):
    """A 50 000-point Gaussian ARFIMA path never builds a T×T matrix."""
    def refuse(*args, **kwargs):
        raise AssertionError("dense Toeplitz factor built for a long path")

    monkeypatch.setattr(models, "toeplitz", refuse)
    path = simulate_path(ARFIMA, [0.3, 1.0], 50_000, seeds.stream(SeedPlan.DATA, 0))
    assert path.shape == (50_000,)
    assert np.all(np.isfinite(path))


def _truncated_ma_path(d, noise, length):
    weights = arfima_ma_weights(d, length + ARFIMA_PRESAMPLE)
    return [np.dot(weights[: t + 1], noise[t::-1]) for t in range(ARFIMA_PRESAMPLE, ARFIMA_PRESAMPLE + length)]


def test_ma_path_matches_truncated_convolution(seeds):
    """Non-Gaussian ARFIMA paths are the MA(∞) filter of pre-sampled innovations."""
    model = ModelFamily(kind=ModelKind.ARFIMA, innovation=Innovation.LAPLACE)
    path = simulate_path(model, [0.2, 1.5], 30, seeds.stream(SeedPlan.DATA, 9))
    noise = 1.5 * standardized_innovations(Innovation.LAPLACE, 30 + ARFIMA_PRESAMPLE, seeds.stream(SeedPlan.DATA, 9))
    np.testing.assert_allclose(path, _truncated_ma_path(0.2, noise, 30), rtol=1e-8, atol=1e-8)


def test_long_gaussian_arfima_path_uses_ma_representation(monkeypatch, seeds):
    """Above the Cholesky limit a Gaussian path is the MA(∞) filter of normals."""
    monkeypatch.setattr(models, "EXACT_CHOLESKY_LIMIT", 8)
    path = simulate_path(ARFIMA, [0.3, 1.0], 20, seeds.stream(SeedPlan.DATA, 10))
    noise = seeds.stream(SeedPlan.DATA, 10).standard_normal(20 + ARFIMA_PRESAMPLE)
    np.testing.assert_allclose(path, _truncated_ma_path(0.3, noise, 20), rtol=1e-8, atol=1e-8)


def test_long_gaussian_arfima_path_rejects_nonstationary(monkeypatch, seeds):
    """The MA fallback still checks d."""
    monkeypatch.setattr(models, "EXACT_CHOLESKY_LIMIT", 8)
    with pytest.raises(StationarityError):
        simulate_path(ARFIMA, [0.6, 1.0], 20, seeds.stream(SeedPlan.DATA, 0))
