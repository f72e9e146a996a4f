import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from projlearn import numerics
from projlearn.analysis import (
    PopulationOperator,
    QuadratureError,
    _cosine_moments,
    assemble_b_nu,
    certify_classes,
    concentration_bound,
    concentration_experiment,
    cross_term,
    error_bracket,
    error_split,
    high_prob_bound_check,
    inverse_bounds_experiment,
    lambda_profile,
    min_n_for_probability_condition,
    rate_experiment,
    spectral_family,
    truncation_event_experiment,
    tsvd_estimate,
)
from projlearn.estimator import EstimatorConfig, ml_estimate
from projlearn.problem import DesignMeasure, ForwardOperator, ProblemSpec, SubspaceFamily, make_ground_truth
from projlearn.sampling import Dataset, SeedPlan, synthesize
from tests.conftest import diagonal_spec

TILT = DesignMeasure("density01", (1.0, 1.0))


def _tilted(M, t=1.0, **kw):
    return ProblemSpec(M, ForwardOperator.power_law(M, t), TILT, kernel_normalization="none", **kw)


# assembly ------------------------------------------------------------------


def test_cosine_moments_against_quad():
    I = _cosine_moments(4, 12)
    for d in range(5):
        for n in range(13):
            ref = integrate.quad(lambda x: x**d * math.cos(n * math.pi * x), 0, 1, limit=200)[0]
            assert I[d, n] == pytest.approx(ref, abs=1e-12)


def test_uniform_diagonal_closed_form():
    M = 16
    spec = ProblemSpec(M, ForwardOperator("diagonal_cosine", singulars=np.arange(1, M + 1) ** -0.5),
                       kernel_normalization="none")
    B = assemble_b_nu(spec)
    assert B.method == "analytic"
    np.testing.assert_allclose(B.matrix, np.diag(1.0 / np.arange(1, M + 1)), atol=1e-15)


def test_tilted_quadrature_symmetric_psd():
    B = assemble_b_nu(_tilted(8))
    assert B.method == "quadrature" and B.quadrature_nodes > 0
    assert np.max(np.abs(B.matrix - B.matrix.T)) <= 1e-14
    assert np.linalg.eigvalsh(B.matrix).min() >= -1e-14


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_tilted_matches_scalar_quadrature_oracle():
    M = 12
    B = assemble_b_nu(_tilted(M)).matrix
    a = np.arange(1, M + 1) ** -0.5

    def phi(k, x):
        return 1.0 if k == 0 else math.sqrt(2) * math.cos(math.pi * k * x)

    for i in range(M):
        for j in range(i, M):
            ref = integrate.quad(lambda x: (2 / 3) * (1 + x) * phi(i, x) * phi(j, x), 0, 1, limit=200, epsabs=1e-14)[0]
            assert B[i, j] == pytest.approx(a[i] * a[j] * ref, abs=1e-12)


def test_tilted_closed_form_entry():
    B = assemble_b_nu(_tilted(8), method="analytic")
    assert B.matrix[0, 1] == pytest.approx(-4 / (3 * math.pi**2), rel=1e-14)
    assert B.matrix[0, 0] == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("M", [32, 256, 512])
def test_quadrature_agrees_with_analytic(M):
    spec = _tilted(M)
    gap = np.max(np.abs(assemble_b_nu(spec, "quadrature").matrix - assemble_b_nu(spec, "analytic").matrix))
    assert gap <= 1e-8


def test_dense_operator_quadrature_vs_analytic():
    M = 20
    W = np.random.default_rng(3).standard_normal((M, M))
    spec = ProblemSpec(M, ForwardOperator("dense_matrix", matrix=W), DesignMeasure("density01", (2.0, -1.0, 1.5)))
    q = assemble_b_nu(spec, "quadrature").matrix
    a = assemble_b_nu(spec, "analytic").matrix
    assert np.max(np.abs(q - a)) <= 1e-12


def test_zero_operator():
    spec = ProblemSpec(4, ForwardOperator("diagonal_cosine", singulars=np.zeros(4)), require_injective=False)
    assert not assemble_b_nu(spec).matrix.any()
    assert not assemble_b_nu(spec, "quadrature").matrix.any()


def test_quadrature_refinement_gate():
    with pytest.raises(QuadratureError):
        assemble_b_nu(_tilted(64), "quadrature", panels=1, nodes=8)


def test_unknown_assembly_method():
    with pytest.raises(ValueError):
        assemble_b_nu(_tilted(4), "montecarlo")


def test_empirical_operator_concentrates():
    spec = diagonal_spec(16, normalization="sup")
    tab = concentration_experiment(spec, 500, 200, [0.01], seed=3)
    assert tab.exceedance[0] <= 0.01


# profiles and certificates -------------------------------------------------


def test_lambda_profile_diagonal_exact():
    B = assemble_b_nu(diagonal_spec(128))
    lam = lambda_profile(B, SubspaceFamily(), 64)
    m = np.arange(1, 65)
    np.testing.assert_allclose(lam, 1.0 / m, rtol=1e-12)


def test_lambda_profile_identity():
    B = PopulationOperator(np.eye(6), "analytic")
    np.testing.assert_allclose(lambda_profile(B, SubspaceFamily(), 6), np.ones(6))


def test_lambda_profile_rotated_interlacing():
    M = 32
    B = assemble_b_nu(diagonal_spec(M))
    lam = lambda_profile(B, SubspaceFamily.random_rotation(M, 4), M)
    assert np.all(lam <= 1 + 1e-12)
    assert np.all(np.diff(lam) <= 1e-12)


def test_lambda_profile_bounds():
    B = assemble_b_nu(diagonal_spec(8))
    with pytest.raises(ValueError):
        lambda_profile(B, SubspaceFamily(), 9)


def test_certificate_diagonal_model():
    B = assemble_b_nu(diagonal_spec(128))
    cert = certify_classes(B, SubspaceFamily(), (1, 64))
    assert cert.t_fit == pytest.approx(1.0, abs=1e-10)
    assert cert.D1_fit == pytest.approx(1.0, abs=1e-10)
    assert cert.D3_fit == pytest.approx(1.0, abs=1e-10)
    assert cert.D2_max <= 1e-12
    assert cert.holds()
    assert "lower bound" in cert.to_dict()["note"]


def test_certificate_tilted_density():
    B = assemble_b_nu(_tilted(128))
    cert = certify_classes(B, SubspaceFamily())
    assert cert.holds()
    # regression values, cross-checked against the quadrature route above
    assert cert.D2_max == pytest.approx(0.14142485578682162, rel=1e-8)
    assert cert.t_fit == pytest.approx(1.070190777521849, rel=1e-8)
    assert 0 < cert.D1_fit <= cert.D3_fit


def test_certificate_rejects_non_monotone_profile():
    B = PopulationOperator(np.array([[1.0, 1, 0, 0], [1, 1, 0, 0], [0, 0, 0.1, 0], [0, 0, 0, 0.1]]), "analytic")
    with pytest.raises(ValueError, match="increases"):
        certify_classes(B, SubspaceFamily(), (1, 2))


def test_certificate_range_validation():
    B = assemble_b_nu(diagonal_spec(8))
    with pytest.raises(ValueError):
        certify_classes(B, SubspaceFamily(), (1, 5))


def test_cross_term_spectral_dense():
    M = 32
    W = np.random.default_rng(1).standard_normal((M, M))
    spec = ProblemSpec(M, ForwardOperator("dense_matrix", matrix=W), TILT)
    B = assemble_b_nu(spec)
    fam = spectral_family(B)
    assert max(cross_term(B, fam, m) for m in range(1, M // 2 + 1)) <= 1e-12
    assert cross_term(B, SubspaceFamily(), 4) > 1e-3


def test_cross_term_identity():
    B = PopulationOperator(np.eye(8), "analytic")
    assert cross_term(B, SubspaceFamily(), 3) == 0.0


def test_cross_term_hand_computed():
    B = PopulationOperator(np.array([[2.0, 0, 1, 0], [0, 1, 0, 2], [1, 0, 3, 0], [0, 2, 0, 5]]), "analytic")
    # (P B P)^+ = diag(1/2, 1); times the tail block [[1, 0], [0, 2]]
    assert cross_term(B, SubspaceFamily(), 2) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        cross_term(B, SubspaceFamily(), 3)


# error split and the spectral cross-check ----------------------------------


def test_error_split_noiseless():
    spec = diagonal_spec(32)
    gt = make_ground_truth(SubspaceFamily(), 32, "sparse_in_V_m", s=1.0, m=6)
    data = synthesize(spec, gt, 60, SeedPlan(3))
    i1, i2 = error_split(spec, data, gt, 6)
    assert not i2.any()
    assert np.linalg.norm(i1) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_error_split_identity(seed):
    M = 24
    fam = SubspaceFamily.random_rotation(M, seed)
    spec = ProblemSpec(M, ForwardOperator.power_law(M, 1.0), TILT, 0.2, fam)
    gt = make_ground_truth(fam, M, "polynomial_decay", s=1.0)
    data = synthesize(spec, gt, 80, SeedPlan(seed, 1))
    rep = ml_estimate(spec, data, EstimatorConfig(7))
    i1, i2 = error_split(spec, data, gt, 7)
    np.testing.assert_allclose(rep.coeffs - gt.coeffs, i1 + i2, atol=1e-9)


def test_error_split_needs_synthetic_data():
    spec = diagonal_spec(8, delta=0.1)
    with pytest.raises(ValueError, match="synthetic"):
        error_split(spec, Dataset([0.1, 0.5], [0.0, 1.0], 0.1), np.zeros(8), 2)


def test_tsvd_dense_spectral_family():
    M = 24
    W = np.random.default_rng(8).standard_normal((M, M))
    base = ProblemSpec(M, ForwardOperator("dense_matrix", matrix=W), TILT, 0.05)
    B = assemble_b_nu(base)
    spec = ProblemSpec(M, base.forward, TILT, 0.05, spectral_family(B))
    gt = make_ground_truth(spec.subspaces, M, "polynomial_decay", s=1.0)
    data = synthesize(spec, gt, 200, SeedPlan(8))
    rep = ml_estimate(spec, data, EstimatorConfig(6))
    np.testing.assert_allclose(rep.coeffs, tsvd_estimate(spec, data, 6, B), atol=1e-9)


# concentration -------------------------------------------------------------


def test_concentration_bound_formula():
    assert concentration_bound(400, 0.1) == pytest.approx(6 * math.log(20) / 20)


def test_concentration_independent_of_delta():
    a = concentration_experiment(diagonal_spec(8, delta=0.0, normalization="sup"), 100, 100, [0.1], seed=1)
    b = concentration_experiment(diagonal_spec(8, delta=3.0, normalization="sup"), 100, 100, [0.1], seed=1)
    assert a.deviations == b.deviations


def test_concentration_needs_trials():
    with pytest.raises(ValueError):
        concentration_experiment(diagonal_spec(8), 100, 99, [0.1], seed=1)


# high-probability bound ----------------------------------------------------


def _one_dim_spec(delta):
    return ProblemSpec(8, ForwardOperator.power_law(8, 1.0), noise_delta=delta, kernel_normalization="none")


def test_high_prob_noiseless():
    spec = _one_dim_spec(0.0)
    gt = make_ground_truth(SubspaceFamily(), 8, "sparse_in_V_m", s=1.0, m=1, values=[0.7])
    row = high_prob_bound_check(spec, gt, 2000, 1, 0.5, 50, seed=1, t=1.0)
    assert row.quantile <= 1e-8
    assert row.bracket == pytest.approx(gt.declared_R0)
    assert row.ratio <= 1e-8


def test_high_prob_constant_stable_across_grid():
    spec = _one_dim_spec(0.1)
    gt = make_ground_truth(SubspaceFamily(), 8, "polynomial_decay", s=1.0)
    rows = [high_prob_bound_check(spec, gt, n, 1, 0.5, 200, seed=2, t=1.0) for n in (2000, 4000, 8000, 16000)]
    ratios = [r.ratio for r in rows]
    assert max(ratios) / min(ratios) < 3


def test_high_prob_precondition_gate():
    spec = _one_dim_spec(0.1)
    gt = make_ground_truth(SubspaceFamily(), 8, "polynomial_decay", s=1.0)
    with pytest.raises(ValueError, match="probability condition"):
        high_prob_bound_check(spec, gt, 50, 1, 0.5, 10, seed=1, t=1.0)


def test_min_n_for_probability_condition():
    n = min_n_for_probability_condition(1.0, 0.5)
    assert math.log(16) <= math.sqrt(n) / 12 and math.log(16) > math.sqrt(n - 1) / 12


def test_error_bracket_formula():
    val = error_bracket(2.0, 4, 1.0, 1.0, 0.1, 100, 0.2)
    assert val == pytest.approx(0.5 + math.log(40) * 0.1 * (4 / 100 + 4 / 10))


# rates ---------------------------------------------------------------------


def test_rate_experiment_theory_slopes():
    for s, slope in ((1.0, -0.25), (2.0, -1 / 3)):
        spec = diagonal_spec(128, delta=0.1)
        gt = make_ground_truth(SubspaceFamily(), 128, "polynomial_decay", s=s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = rate_experiment(spec, gt, [64, 128, 256, 512], trials=3, t=1.0, seed=1)
        assert fit.theory_slope == pytest.approx(slope)
        assert len(fit.rows()) == 4 and np.isfinite(fit.slope)


def test_rate_experiment_t_defaults_to_fit():
    spec = diagonal_spec(64, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 64, "polynomial_decay", s=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = rate_experiment(spec, gt, [64, 128, 256, 512], trials=2, seed=1)
    assert fit.theory_slope == pytest.approx(-0.25, abs=1e-9)


def test_rate_experiment_rejects_clamp():
    spec = diagonal_spec(16, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    with pytest.raises(ValueError, match="ambient dimension"):
        rate_experiment(spec, gt, [256, 1024, 4096, 16384], trials=2, t=1.0)


def test_rate_experiment_grid_validation():
    spec = diagonal_spec(16, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    with pytest.raises(ValueError):
        rate_experiment(spec, gt, [10, 20, 40], trials=2, t=1.0)
    with pytest.raises(ValueError):
        rate_experiment(spec, gt, [10, 20, 20, 40], trials=2, t=1.0)
    with pytest.raises(ValueError):
        rate_experiment(diagonal_spec(16), gt, [10, 20, 30, 40], trials=2, t=1.0)


def test_rate_experiment_warns_on_moment_condition():
    spec = diagonal_spec(64, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 64, "polynomial_decay", s=1.0)
    with pytest.warns(UserWarning, match="moment bound"):
        rate_experiment(spec, gt, [64, 128, 256, 512], trials=2, t=1.0)


# event-conditional checks --------------------------------------------------


def test_inverse_bounds_on_event():
    spec = diagonal_spec(16, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    rep = inverse_bounds_experiment(spec, gt, 2000, 8, 100, seed=3)
    assert rep.event_trials > 10 and rep.ok
    assert rep.bounds["a2"] == pytest.approx(2 * 8)
    assert rep.D2 <= 1e-12


def test_inverse_bounds_tilted_density():
    spec = _tilted(16, noise_delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    rep = inverse_bounds_experiment(spec, gt, 4000, 4, 100, seed=5)
    assert rep.event_trials > 10 and rep.ok and rep.D2 > 0


def test_truncation_noiseless_never_exceeds():
    spec = diagonal_spec(16)
    gt = make_ground_truth(SubspaceFamily(), 16, "sparse_in_V_m", s=1.0, m=2)
    ev = truncation_event_experiment(spec, gt, 200, 2, 200, seed=1)
    assert ev.R > gt.norm and ev.joint_count == 0 and ev.ok


def test_truncation_statistic_with_tiny_radius():
    spec = diagonal_spec(16, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    ev = truncation_event_experiment(spec, gt, 200, 2, 200, seed=1, R=1e-6)
    assert ev.joint_frequency == pytest.approx(ev.event_fraction)
    assert ev.event_fraction > 0.5 and not ev.ok


def test_parallel_matches_serial():
    spec = diagonal_spec(16, delta=0.1)
    gt = make_ground_truth(SubspaceFamily(), 16, "polynomial_decay", s=1.0)
    a = inverse_bounds_experiment(spec, gt, 500, 4, 40, seed=11, workers=1)
    b = inverse_bounds_experiment(spec, gt, 500, 4, 40, seed=11, workers=2)
    assert a.max_values == b.max_values and a.event_trials == b.event_trials
