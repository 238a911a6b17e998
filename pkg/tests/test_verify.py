import numpy as np
import pytest

from pguide.data import ModeSpec
from pguide.numcore import Rng, normal_sample
from pguide.prior import PriorModel
from pguide.verify import (
    LinearField,
    _mixture_terms,
    dist_cfg_closed_form_check,
    eval_count_law_check,
    expm_series,
    fit_loglog,
    flow_jacobian,
    grad_attenuation_check,
    gronwall_report,
    linear_response_check,
    mode_accuracy,
    nll_mu_sigma_grads,
    numeric_grad,
    prior_bayes_check,
    score_connection_check,
    seed_stat_check,
    velocity_response_check,
)
from pguide.data import gen_two_mode, two_mode_specs
from pguide.flow import VelocityNet
from pguide.prior import train_prior


class FrozenField:
    """v = 0 everywhere: the flow map is the identity."""

    def forward(self, x, t, y):
        return np.zeros_like(np.asarray(x, dtype=float))


EPS_GRID = [0.1, 0.05, 0.025, 0.0125]


class TestOracles:
    def test_numeric_grad_on_quadratic(self):
        f = lambda v: float(v[0] ** 2 + 3.0 * v[1])
        g = numeric_grad(f, np.array([2.0, -1.0]))
        assert np.allclose(g, [4.0, 3.0], atol=1e-8)

    def test_expm_series_vs_diagonal(self):
        A = np.diag([0.3, -0.2])
        assert np.allclose(expm_series(A), np.diag(np.exp([0.3, -0.2])),
                           atol=1e-14)

    def test_fit_loglog_pure_power(self):
        eps = np.array([0.1, 0.05, 0.025])
        assert abs(fit_loglog(eps, 3.0 * eps ** 2) - 2.0) < 1e-12

    def test_quadratic_remainder_halving_ratio(self):
        # exponent exactly 2 means halving eps divides the remainder by 4
        eps = np.array(EPS_GRID)
        rem = 0.7 * eps ** 2
        assert np.allclose(rem[:-1] / rem[1:], 4.0, atol=1e-12)
        assert abs(fit_loglog(eps, rem) - 2.0) < 1e-12


class TestFlowJacobian:
    def test_frozen_flow_identity(self):
        J = flow_jacobian(FrozenField(), np.array([0.4, -0.2]), 1.0, steps=10)
        assert np.allclose(J, np.eye(2), atol=1e-10)

    def test_linear_field_matches_matrix_exponential(self):
        A = np.array([[0.0, 0.3], [-0.3, 0.1]])
        J = flow_jacobian(LinearField(A), np.array([0.5, -0.3]), 1.0,
                          steps=2048)
        assert np.abs(J - expm_series(A)).max() < 1e-3

    def test_t_zero_is_identity(self):
        A = np.array([[0.2, 0.0], [0.0, -0.4]])
        J = flow_jacobian(LinearField(A), np.array([1.0, 1.0]), 0.0, steps=50)
        assert np.allclose(J, np.eye(2), atol=1e-10)


class TestLinearResponse:
    def test_linear_field_exact_linear(self):
        rep = linear_response_check(LinearField(np.array([[0.0, 0.4],
                                                          [-0.4, 0.1]])),
                                    np.array([0.5, -0.3]), np.array([1.0, 0.7]),
                                    1.0, EPS_GRID, steps=50)
        assert rep.fitted_exponent == "exact-linear"
        assert max(rep.remainders) < 1e-12
        assert rep.report()["pass"]

    def test_requires_decreasing_grid(self):
        with pytest.raises(ValueError):
            linear_response_check(FrozenField(), np.zeros(2), np.ones(2), 1.0,
                                  [0.01, 0.05, 0.1])

    def test_requires_nonzero_direction(self):
        with pytest.raises(ValueError):
            linear_response_check(FrozenField(), np.zeros(2), np.zeros(2), 1.0,
                                  EPS_GRID)

    def test_velocity_response_linear_field_exact(self):
        rep = velocity_response_check(LinearField(np.array([[0.1, 0.2],
                                                            [-0.2, 0.0]])),
                                      np.array([0.3, 0.3]), np.array([1.0, 0.0]),
                                      [0.2, 0.5, 0.8], EPS_GRID, steps=40)
        assert rep["aggregate_exponent"] == "exact-linear"

    def test_velocity_difference_per_eps_converges(self):
        # D(eps)/eps approaches a fixed direction: successive normalized
        # differences ||D(e_k)/e_k - D(e_{k+1})/e_{k+1}|| must shrink
        net = VelocityNet(dim=2, n_classes=2, hidden=(8,), embed_dim=4,
                          fourier=2, rng=Rng(44))
        net.head_W.value[:] = 0.5 * normal_sample(Rng(45), 8, 2)
        rep = velocity_response_check(net, np.array([0.4, -0.6]),
                                      np.array([0.8, 0.6]),
                                      [0.2, 0.5, 0.8], EPS_GRID, y=0, steps=30)
        dev = np.linalg.norm(np.array(rep["pair_deviations"]), axis=1)
        normalized = dev / np.array(rep["pair_epsilons"])
        assert np.all(np.diff(normalized) < 0)


class TestScoreConnection:
    def test_single_component_both_sides_zero(self):
        specs = [ModeSpec(center=(1.0, -1.0), sigma=0.8, label=0)]
        grid = normal_sample(Rng(1), 20, 2)
        rep = score_connection_check(specs, [1.0], 0.5, grid)
        assert rep["measured"]["max_violation"] < 1e-14

    def test_symmetric_mixture_antisymmetric_at_midpoint(self):
        specs = [ModeSpec(center=(-1.0,), sigma=0.5, label=0),
                 ModeSpec(center=(1.0,), sigma=0.5, label=1)]
        r, post_mean, grad_log_a = _mixture_terms(specs, [0.5, 0.5], 0.7,
                                                  np.array([0.0]))
        marginal = (r[:, None] * post_mean).sum(axis=0)
        lhs0 = post_mean[0] - marginal
        lhs1 = post_mean[1] - marginal
        assert np.allclose(lhs0, -lhs1, atol=1e-14)

    def test_acceptance_grid_exact(self):
        specs = [ModeSpec(center=(-2.0,), sigma=0.8, label=0),
                 ModeSpec(center=(1.5,), sigma=0.6, label=1)]
        grid = np.linspace(-6.0, 6.0, 100).reshape(-1, 1)
        rep = score_connection_check(specs, [0.4, 0.6], 0.7, grid)
        assert rep["pass"]
        assert rep["measured"]["max_violation"] < 1e-8

    def test_2d_mixture(self):
        specs = two_mode_specs()
        grid = normal_sample(Rng(2), 50, 2) * 3.0
        rep = score_connection_check(specs, [0.5, 0.5], 0.7, grid)
        assert rep["measured"]["max_violation"] < 1e-8


class TestAttenuation:
    def test_report_passes(self):
        rep = grad_attenuation_check(n_probes=100, rng=Rng(9))
        assert rep["pass"]

    def test_zero_residual_zero_grad(self):
        mu = np.array([0.3, -0.4])
        g_mu, _ = nll_mu_sigma_grads(mu.copy(), mu, np.array([1.0, 2.0]))
        assert np.array_equal(g_mu, np.zeros(2))

    def test_hand_value(self):
        # x - mu = 2, sigma^2 = 4 -> grad -0.5
        g_mu, _ = nll_mu_sigma_grads(np.array([2.0]), np.array([0.0]),
                                     np.array([2.0]))
        assert g_mu[0] == -0.5

    def test_fixed_unit_model_rejected(self):
        model = PriorModel(1, 2, variance_mode="fixed-unit")
        with pytest.raises(ValueError):
            grad_attenuation_check(model)


class TestModeAccuracy:
    def test_samples_at_centers(self):
        specs = two_mode_specs()
        centers = np.array([s.center for s in specs])
        labels = np.array([0, 1, 0, 1])
        rep = mode_accuracy(centers[labels], labels, specs)
        assert rep.overall == 1.0
        assert rep.per_class_accuracy == [1.0, 1.0]

    def test_adversarial_permutation(self):
        specs = two_mode_specs()
        centers = np.array([s.center for s in specs])
        labels = np.array([0, 1] * 10)
        rep = mode_accuracy(centers[1 - labels], labels, specs)
        assert rep.overall == 0.0

    def test_radius_gate(self):
        specs = [ModeSpec(center=(0.0, 0.0), sigma=0.5, label=0)]
        inside = np.array([[1.9, 0.0]])      # dist 1.9 < 4 * 0.5
        outside = np.array([[2.1, 0.0]])
        assert mode_accuracy(inside, [0], specs).overall == 1.0
        assert mode_accuracy(outside, [0], specs).overall == 0.0

    def test_translation_invariance(self):
        specs = two_mode_specs()
        samples = normal_sample(Rng(3), 40, 2) + 2.0
        labels = Rng(4).integers(40, 2)
        base = mode_accuracy(samples, labels, specs).overall
        shift = np.array([10.0, -7.0])
        moved_specs = [ModeSpec(center=tuple(np.array(s.center) + shift),
                                sigma=s.sigma, label=s.label) for s in specs]
        moved = mode_accuracy(samples + shift, labels, moved_specs).overall
        assert base == moved

    def test_permutation_invariance(self):
        specs = two_mode_specs()
        samples = normal_sample(Rng(5), 30, 2) * 3.0
        labels = Rng(6).integers(30, 2)
        perm = np.argsort(Rng(7).uniform(30))
        a = mode_accuracy(samples, labels, specs).overall
        b = mode_accuracy(samples[perm], labels[perm], specs).overall
        assert a == b

    def test_overall_is_weighted_mean(self):
        specs = two_mode_specs()
        centers = np.array([s.center for s in specs])
        # 3 correct class-0 samples, 1 far-off class-1 sample
        samples = np.vstack([np.tile(centers[0], (3, 1)), [[100.0, 100.0]]])
        labels = np.array([0, 0, 0, 1])
        rep = mode_accuracy(samples, labels, specs)
        assert rep.per_class_accuracy == [1.0, 0.0]
        assert rep.overall == 0.75


def _stat_prior():
    prior = PriorModel(1, 2)
    prior.mu.value[0] = [2.0, -1.0]
    prior.mu.value[1] = [0.0, 0.5]
    prior.log_sigma.value[0] = np.log([0.8, 0.6])
    prior.log_sigma.value[1] = np.log([1.0, 1.4])
    return prior


class TestSeedStats:
    def test_homoscedastic_mean_interpolation(self):
        prior = PriorModel(1, 2)
        prior.mu.value[0] = [3.0, 1.0]
        prior.mu.value[1] = [-1.0, 0.0]
        rep = seed_stat_check(prior, "pguide_full", 1.5, 20_000, Rng(10))
        assert rep["pass"]
        assert rep["measured"]["prior_vs_dist_scale_gap"] < 1e-12

    def test_w1_matches_conditional_moments(self):
        rep = seed_stat_check(_stat_prior(), "pguide_full", 1.0, 5000, Rng(11))
        assert rep["pass"]
        assert np.allclose(rep["measured"]["analytic_std"], [0.8, 0.6])

    def test_heteroscedastic_scale_gap_reported(self):
        rep = seed_stat_check(_stat_prior(), "pguide_full", 1.5, 5000, Rng(12))
        # extrapolated prior scale vs precision-combined scale genuinely differ
        assert rep["measured"]["prior_vs_dist_scale_gap"] > 0.01

    def test_dist_cfg_draws(self):
        rep = seed_stat_check(_stat_prior(), "dist_cfg", 1.3, 20_000, Rng(13))
        assert rep["pass"]

    def test_mean_only_uses_conditional_scale(self):
        rep = seed_stat_check(_stat_prior(), "pguide_mean_only", 1.5, 5000,
                              Rng(14))
        assert np.allclose(rep["measured"]["analytic_std"], [0.8, 0.6])

    def test_needs_enough_draws(self):
        with pytest.raises(ValueError):
            seed_stat_check(_stat_prior(), "pguide_full", 1.0, 10, Rng(15))


class TestBuiltinReports:
    def test_eval_count_law(self):
        assert eval_count_law_check()["pass"]

    def test_closed_form(self):
        assert dist_cfg_closed_form_check()["pass"]

    def test_prior_bayes_on_converged_tables(self):
        data = gen_two_mode(4000, Rng(16))
        specs = two_mode_specs()
        prior = PriorModel(2, 2)
        train_prior(prior, data, epochs=400, lr=0.05)
        rep = prior_bayes_check(prior, data, specs)
        assert rep["pass"]

    def test_prior_bayes_fails_on_fresh_model(self):
        data = gen_two_mode(500, Rng(17))
        rep = prior_bayes_check(PriorModel(2, 2), data, two_mode_specs())
        assert not rep["pass"]

    def test_gronwall_report_never_gates(self):
        net = VelocityNet(dim=2, n_classes=2, hidden=(8,), embed_dim=4,
                          fourier=2, rng=Rng(18))
        net.head_W.value[:] = 0.2 * normal_sample(Rng(19), 8, 2)
        rep = gronwall_report(net, np.zeros(2), y=0, w=1.5, steps=20)
        assert rep["pass"]
        assert rep["threshold"] == {"gated": False}
        assert rep["measured"]["integral_bound_at_t1"] >= 0.0
