"""Numerical verification: trajectory-linearization checks, analytic
identities, quality metrics, and the brute-force oracles used by the tests.

Every check returns a JSON-serializable report block
``{name, inputs, measured, threshold, pass}`` (or a dataclass exposing
``.report()``), so the CLI can emit one document for a whole run.

A note on the first-order trajectory claim verified here: the velocity
difference induced by an initial-state shift eps*dz equals eps * (d/dt of
the flow Jacobian applied to dz) plus an O(eps^2) remainder. We therefore
test first-order *homogeneity in eps* (pairwise remainders scale
quadratically), not directional equality with dz itself, which would require
the Jacobian derivative to be proportional to the identity. Reports carry
this restatement in their ``inputs.statement`` field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Rng, normal_sample
from .prior import (
    PriorModel,
    combined_scale,
    dist_cfg_params,
    guided_seed,
    nll_loss,
    nll_mu_sigma_grads,
)
from .data import LabeledBatch

__all__ = [
    "LinearField",
    "LinearResponseReport",
    "ModeAccuracyReport",
    "numeric_grad",
    "gradient_check",
    "expm_series",
    "fit_loglog",
    "flow_map",
    "flow_jacobian",
    "linear_response_check",
    "velocity_response_check",
    "score_connection_check",
    "grad_attenuation_check",
    "mode_accuracy",
    "seed_stat_check",
    "dist_cfg_closed_form_check",
    "eval_count_law_check",
    "prior_bayes_check",
    "gronwall_report",
    "make_report",
]

HOMOGENEITY_STATEMENT = (
    "velocity/state differences under an initial shift eps*dz are first-order "
    "homogeneous in eps; pairwise remainders scale as eps^2")


def make_report(name, inputs, measured, threshold, passed):
    return {"name": name, "inputs": inputs, "measured": measured,
            "threshold": threshold, "pass": bool(passed)}


# ---------------------------------------------------------------------------
# oracles


def numeric_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def gradient_check(loss_fn, grad_fn, params, rng: Rng, n_probes: int = 100,
                   h: float = 1e-5) -> float:
    """Max relative error between accumulated grads and central differences.

    ``loss_fn()`` evaluates the scalar loss at the current parameter values
    without side effects; ``grad_fn()`` zeroes and repopulates ``.grad`` on
    ``params``. Probes hit random entries of random parameters.
    """
    grad_fn()
    worst = 0.0
    for _ in range(n_probes):
        p = params[int(rng.integers(1, len(params))[0])]
        i = int(rng.integers(1, p.value.size)[0])
        orig = float(p.value.flat[i])
        p.value.flat[i] = orig + h
        lp = loss_fn()
        p.value.flat[i] = orig - h
        lm = loss_fn()
        p.value.flat[i] = orig
        fd = (lp - lm) / (2.0 * h)
        a = float(p.grad.flat[i])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


def expm_series(A: np.ndarray, terms: int = 30) -> np.ndarray:
    """Matrix exponential by truncated power series; fine for small ||A||."""
    A = np.asarray(A, dtype=np.float64)
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


def fit_loglog(eps, vals):
    """Least-squares slope of log(vals) against log(eps)."""
    eps = np.asarray(eps, dtype=np.float64)
    vals = np.asarray(vals, dtype=np.float64)
    keep = vals > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(eps[keep]), np.log(vals[keep]), 1)[0])


class LinearField:
    """Analytic linear velocity field v(x) = x A^T; exact-linearity baseline."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        self.dim = self.A.shape[0]

    def forward(self, x, t, y):
        return np.asarray(x, dtype=np.float64) @ self.A.T


# ---------------------------------------------------------------------------
# flow maps and trajectory linearization


def flow_map(net, z, t: float, *, y: int = 0, steps: int = 50) -> np.ndarray:
    """State at time t of the Euler flow started at z (grid times k/steps)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    n_sub = int(round(t * steps))
    x = np.asarray(z, dtype=np.float64).reshape(1, -1).copy()
    dt = 1.0 / steps
    for k in range(n_sub):
        x = x + net.forward(x, k * dt, y) * dt
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state during flow_map integration")
    return x[0]


def flow_jacobian(net, z, t: float, h: float = 1e-4, *, y: int = 0,
                  steps: int = 50) -> np.ndarray:
    """d x d sensitivity of the flow map to its start, by central differences.

    Column i is (flow(z + h e_i) - flow(z - h e_i)) / 2h; two integrations
    per input coordinate.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    z = np.asarray(z, dtype=np.float64)
    d = z.size
    J = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        J[:, i] = (flow_map(net, z + e, t, y=y, steps=steps)
                   - flow_map(net, z - e, t, y=y, steps=steps)) / (2.0 * h)
    return J


@dataclass
class LinearResponseReport:
    """Measured Taylor remainders of the flow map around one start state."""

    epsilons: list
    remainders: list
    fitted_exponent: object   # float, or the string "exact-linear"
    jacobian: np.ndarray

    def report(self, lo: float = 1.7, hi: float = 2.3):
        exact = self.fitted_exponent == "exact-linear"
        ok = exact or (self.fitted_exponent is not None
                       and lo <= self.fitted_exponent <= hi)
        return make_report(
            "linear_response",
            {"epsilons": list(self.epsilons),
             "statement": HOMOGENEITY_STATEMENT},
            {"remainders": list(self.remainders),
             "fitted_exponent": self.fitted_exponent},
            {"exponent_range": [lo, hi], "or": "exact-linear"},
            ok,
        )


def _check_eps_grid(epsilons):
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise ValueError("need at least 3 epsilon values")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if eps[0] / eps[-1] < 8.0:
        raise ValueError("epsilons must span at least three octaves")
    return eps


EXACT_LINEAR_FLOOR = 1e-12


def linear_response_check(net, z_u, dz, t: float, epsilons, *, y: int = 0,
                          steps: int = 50, h: float = 1e-4) -> LinearResponseReport:
    """Measure R(eps) = flow(z + eps dz) - flow(z) - eps J dz and fit its order.

    A genuinely quadratic remainder fits a log-log slope near 2; a linear
    field leaves remainders at round-off, reported as "exact-linear".
    """
    eps = _check_eps_grid(epsilons)
    z_u = np.asarray(z_u, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    if not np.any(dz != 0):
        raise ValueError("dz must be nonzero")
    J = flow_jacobian(net, z_u, t, h=h, y=y, steps=steps)
    base = flow_map(net, z_u, t, y=y, steps=steps)
    Jdz = J @ dz
    remainders = []
    for e in eps:
        r = flow_map(net, z_u + e * dz, t, y=y, steps=steps) - base - e * Jdz
        remainders.append(float(np.linalg.norm(r)))
    if max(remainders) < EXACT_LINEAR_FLOOR:
        exponent = "exact-linear"
    else:
        exponent = fit_loglog(eps, remainders)
    return LinearResponseReport(epsilons=eps, remainders=remainders,
                                fitted_exponent=exponent, jacobian=J)


def _velocity_series(net, z0, y, steps, grid_idx):
    """Velocities v(x_k, t_k) along the Euler trajectory at selected steps."""
    x = np.asarray(z0, dtype=np.float64).reshape(1, -1).copy()
    dt = 1.0 / steps
    out = []
    want = set(grid_idx)
    for k in range(steps):
        v = net.forward(x, k * dt, y)
        if k in want:
            out.append(v[0].copy())
        x = x + v * dt
    return np.array(out)


def velocity_response_check(net, z_u, dz, t_grid, epsilons, *, y: int = 0,
                            steps: int = 50) -> dict:
    """First-order homogeneity of along-trajectory velocity differences.

    For each eps, D(eps, t) is the velocity difference (perturbed minus base
    trajectory) at the grid times. Consecutive eps pairs at ratio rho give
    deviations ||D(eps) - rho D(eps/rho)|| whose leading term is quadratic in
    eps; we fit per-time exponents and one aggregate exponent over the whole
    grid.
    """
    eps = _check_eps_grid(epsilons)
    z_u = np.asarray(z_u, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    if not np.any(dz != 0):
        raise ValueError("dz must be nonzero")
    grid_idx = sorted({min(int(round(t * steps)), steps - 1) for t in t_grid})
    base = _velocity_series(net, z_u, y, steps, grid_idx)
    diffs = {e: _velocity_series(net, z_u + e * dz, y, steps, grid_idx) - base
             for e in eps}
    pair_eps = []
    pair_dev = []     # (n_pairs, n_grid) per-time deviation norms
    for e_big, e_small in zip(eps, eps[1:]):
        rho = e_big / e_small
        dev = diffs[e_big] - rho * diffs[e_small]
        pair_eps.append(e_big)
        pair_dev.append(np.linalg.norm(dev, axis=1))
    pair_dev = np.array(pair_dev)
    if pair_dev.max() < EXACT_LINEAR_FLOOR:
        per_time = ["exact-linear"] * pair_dev.shape[1]
        aggregate = "exact-linear"
    else:
        per_time = [fit_loglog(pair_eps, pair_dev[:, j])
                    for j in range(pair_dev.shape[1])]
        aggregate = fit_loglog(pair_eps, np.linalg.norm(pair_dev, axis=1))
    return {
        "epsilons": eps,
        "grid_times": [k / steps for k in grid_idx],
        "pair_epsilons": pair_eps,
        "pair_deviations": pair_dev.tolist(),
        "per_time_exponents": per_time,
        "aggregate_exponent": aggregate,
        "statement": HOMOGENEITY_STATEMENT,
    }


# ---------------------------------------------------------------------------
# analytic identities


def _mixture_terms(specs, weights, sigma_t, xt):
    """Log-responsibilities, per-component posterior means, and their
    xt-gradient building blocks for a Gaussian mixture noised by adding
    N(0, sigma_t^2 I)."""
    centers = np.array([s.center for s in specs], dtype=np.float64)
    svar = np.array([s.sigma ** 2 for s in specs], dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != centers.shape[0]:
        raise ValueError("weights length must match specs")
    if sigma_t <= 0:
        raise ValueError("sigma_t must be positive")
    v = svar + sigma_t ** 2                      # per-component noised variance
    d = centers.shape[1]
    diff = xt[None, :] - centers                 # (K, d)
    sq = (diff * diff).sum(axis=1)
    log_a = np.log(w) - 0.5 * sq / v - 0.5 * d * np.log(2.0 * np.pi * v)
    log_r = log_a - _logsumexp(log_a)
    post_mean = centers + (svar / v)[:, None] * diff
    grad_log_a = -diff / v[:, None]              # d/dxt of each log component
    return np.exp(log_r), post_mean, grad_log_a


def _logsumexp(a):
    m = a.max()
    return m + np.log(np.exp(a - m).sum())


def score_connection_check(specs, weights, sigma_t: float, xt_grid) -> dict:
    """Exactness of: conditional-minus-marginal posterior mean equals
    sigma_t^2 times the gradient of the log class-posterior.

    Both sides are evaluated in closed form for a Gaussian mixture under the
    additive-noise convention x_t = x_0 + sigma_t * eps (the convention that
    makes the posterior-mean score form exact as written). Returns the max
    absolute violation over the grid and all class labels.
    """
    xt_grid = np.atleast_2d(np.asarray(xt_grid, dtype=np.float64))
    if xt_grid.shape[1] != len(specs[0].center):
        xt_grid = xt_grid.T
    worst = 0.0
    for xt in xt_grid:
        r, post_mean, grad_log_a = _mixture_terms(specs, weights, sigma_t, xt)
        marginal_mean = (r[:, None] * post_mean).sum(axis=0)
        marginal_grad = (r[:, None] * grad_log_a).sum(axis=0)
        for k in range(len(specs)):
            lhs = post_mean[k] - marginal_mean
            rhs = sigma_t ** 2 * (grad_log_a[k] - marginal_grad)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return make_report(
        "score_connection",
        {"n_components": len(specs), "sigma_t": sigma_t,
         "grid_points": int(xt_grid.shape[0]),
         "noising": "x_t = x_0 + sigma_t * eps"},
        {"max_violation": worst},
        {"max_violation": 1e-8},
        worst < 1e-8,
    )


def grad_attenuation_check(model: PriorModel | None = None, n_probes: int = 100,
                           rng: Rng | None = None) -> dict:
    """Mean-gradient of the Gaussian NLL equals -(x - mu)/sigma^2, and
    doubling sigma scales it by exactly 1/4.

    The first part drives the actual training gradient path (single-sample
    batches through ``nll_loss``) against the closed form; the second applies
    the elementwise gradient function at sigma and exactly-representable
    2*sigma and demands a bit-exact quarter.
    """
    if rng is None:
        rng = Rng(2024)
    if model is not None and model.variance_mode != "learnable":
        raise ValueError("attenuation check needs a learnable-variance model")
    dim = model.dim if model is not None else 3
    scratch = PriorModel(n_classes=1, dim=dim, variance_mode="learnable")
    worst_identity = 0.0
    worst_quarter = 0.0
    for _ in range(n_probes):
        x = 2.0 * normal_sample(rng, 1, dim)
        mu = 2.0 * normal_sample(rng, 1, dim)[0]
        log_sigma = 0.5 * normal_sample(rng, 1, dim)[0]
        scratch.mu.value[0] = mu
        scratch.log_sigma.value[0] = log_sigma
        scratch.mu.zero_grad()
        scratch.log_sigma.zero_grad()
        batch = LabeledBatch(x=x, y=np.zeros(1, dtype=np.int64))
        nll_loss(scratch, batch)
        sigma = np.exp(log_sigma)
        closed = -(x[0] - mu) / (sigma * sigma)
        worst_identity = max(
            worst_identity, float(np.max(np.abs(scratch.mu.grad[0] - closed))))
        g1 = nll_mu_sigma_grads(x[0], mu, sigma)[0]
        g2 = nll_mu_sigma_grads(x[0], mu, 2.0 * sigma)[0]
        worst_quarter = max(worst_quarter, float(np.max(np.abs(g2 - g1 / 4.0))))
    return make_report(
        "grad_attenuation",
        {"n_probes": n_probes, "dim": dim},
        {"max_identity_violation": worst_identity,
         "max_quarter_violation": worst_quarter},
        {"max_identity_violation": 1e-12, "max_quarter_violation": 0.0},
        worst_identity <= 1e-12 and worst_quarter == 0.0,
    )


# ---------------------------------------------------------------------------
# sample quality and seed statistics


@dataclass
class ModeAccuracyReport:
    """Nearest-mode classification of generated samples.

    ``assignment_radius`` is the multiplier on each mode's sigma inside which
    a sample may be credited to that mode.
    """

    per_class_accuracy: list
    overall: float
    assignment_radius: float

    def report(self, threshold=None):
        passed = True if threshold is None else self.overall >= threshold
        return make_report(
            "mode_accuracy",
            {"assignment_radius": self.assignment_radius},
            {"per_class_accuracy": self.per_class_accuracy,
             "overall": self.overall},
            {"overall_min": threshold},
            passed,
        )


def mode_accuracy(samples, labels, specs, radius_mult: float = 4.0) -> ModeAccuracyReport:
    """Score samples by nearest mode center.

    A sample is correct iff its nearest center carries its label and it lies
    within radius_mult * sigma of that center. Overall accuracy is the
    count-weighted mean of the per-class values.
    """
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    by_label = sorted(specs, key=lambda s: s.label)
    if [s.label for s in by_label] != list(range(len(by_label))):
        raise ValueError("specs must cover labels 0..K-1")
    if labels.size and (labels.min() < 0 or labels.max() >= len(by_label)):
        raise ValueError("sample labels outside the mode label set")
    centers = np.array([s.center for s in by_label], dtype=np.float64)
    sigmas = np.array([s.sigma for s in by_label], dtype=np.float64)
    dists = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    nearest = dists.argmin(axis=1)
    near_dist = dists[np.arange(len(samples)), nearest]
    correct = (nearest == labels) & (near_dist <= radius_mult * sigmas[nearest])
    per_class = []
    for k in range(len(by_label)):
        mask = labels == k
        per_class.append(float(correct[mask].mean()) if mask.any() else 0.0)
    overall = float(correct.mean()) if len(samples) else 0.0
    return ModeAccuracyReport(per_class_accuracy=per_class, overall=overall,
                              assignment_radius=radius_mult)


def seed_stat_check(prior: PriorModel, mode: str, w: float, n: int, rng: Rng,
                    y: int = 0) -> dict:
    """Empirical mean/std of guided seeds against their analytic values.

    ``mode`` is one of 'pguide_full', 'pguide_mean_only', 'dist_cfg'. Mean
    tolerance is the 3-sigma band 3*scale/sqrt(n) per dimension; std
    tolerance is 5*scale/sqrt(2n). The report also carries the analytic gap
    between the extrapolated prior-space scale and the distribution-space
    scale, which differ in general for unequal variances.
    """
    if n < 1000:
        raise ValueError("need n >= 1000 draws for stable moments")
    d = prior.dim
    eps = normal_sample(rng, n, d)
    if mode == "pguide_full":
        draws = guided_seed(prior, y, w, eps, variant="full")
        mu_u, mu_c = prior.mu.value[prior.null_id], prior.mu.value[y]
        mean = mu_c if w == 1.0 else mu_u + w * (mu_c - mu_u)
        scale = combined_scale(prior, y, w)[0]
    elif mode == "pguide_mean_only":
        draws = guided_seed(prior, y, w, eps, variant="mean_only")
        mu_u, mu_c = prior.mu.value[prior.null_id], prior.mu.value[y]
        mean = mu_c if w == 1.0 else mu_u + w * (mu_c - mu_u)
        scale = prior.sigma_table()[y]
    elif mode == "dist_cfg":
        mean, scale = dist_cfg_params(prior, y, w)
        draws = mean + scale * eps
    else:
        raise ValueError(f"unknown seed mode {mode!r}")
    emp_mean = draws.mean(axis=0)
    emp_std = draws.std(axis=0, ddof=1)
    mean_tol = 3.0 * scale / np.sqrt(n) + 1e-12
    std_tol = 5.0 * scale / np.sqrt(2.0 * n) + 1e-12
    mean_dev = np.abs(emp_mean - mean)
    std_dev = np.abs(emp_std - scale)
    pg_scale = combined_scale(prior, y, w)[0]
    try:
        dist_scale = dist_cfg_params(prior, y, w)[1]
        scale_gap = float(np.max(np.abs(pg_scale - dist_scale)))
    except ValueError:
        scale_gap = None   # combined precision not positive at this w
    return make_report(
        "seed_stats",
        {"mode": mode, "w": w, "n": n, "y": y},
        {"empirical_mean": emp_mean.tolist(),
         "analytic_mean": np.asarray(mean).tolist(),
         "empirical_std": emp_std.tolist(),
         "analytic_std": np.asarray(scale).tolist(),
         "max_mean_dev": float(mean_dev.max()),
         "max_std_dev": float(std_dev.max()),
         "prior_vs_dist_scale_gap": scale_gap},
        {"mean_tol": mean_tol.tolist(), "std_tol": std_tol.tolist()},
        bool(np.all(mean_dev <= mean_tol) and np.all(std_dev <= std_tol)),
    )


def dist_cfg_closed_form_check() -> dict:
    """Worked examples of the distribution-space guidance Gaussian.

    Equal variances must reduce to plain mean interpolation with the shared
    scale; the unequal-variance example (mu_u=0, mu_c=4, sigma_u=1,
    sigma_c=2, w=0.5) must give variance 1.6 and mean 0.8. Both to 1e-12.
    """
    homo = PriorModel(n_classes=1, dim=2, variance_mode="learnable")
    homo.mu.value[0] = [1.0, -2.0]
    homo.mu.value[1] = [0.3, 0.4]
    homo.log_sigma.value[:] = np.log(0.7)
    w = 0.7
    mu_cfg, sigma_cfg = dist_cfg_params(homo, 0, w)
    expect_mu = (1.0 - w) * homo.mu.value[1] + w * homo.mu.value[0]
    homo_mu_err = float(np.max(np.abs(mu_cfg - expect_mu)))
    homo_sigma_err = float(np.max(np.abs(sigma_cfg - np.exp(np.log(0.7)))))

    hetero = PriorModel(n_classes=1, dim=1, variance_mode="learnable")
    hetero.mu.value[0] = 4.0
    hetero.mu.value[1] = 0.0
    hetero.log_sigma.value[0] = np.log(2.0)
    hetero.log_sigma.value[1] = 0.0
    mu_h, sigma_h = dist_cfg_params(hetero, 0, 0.5)
    var_err = abs(float(sigma_h[0] ** 2) - 1.6)
    mu_err = abs(float(mu_h[0]) - 0.8)

    worst = max(homo_mu_err, homo_sigma_err, var_err, mu_err)
    return make_report(
        "dist_cfg_closed_form",
        {"homoscedastic_w": w,
         "worked_example": {"mu_u": 0.0, "mu_c": 4.0, "sigma_u": 1.0,
                            "sigma_c": 2.0, "w": 0.5}},
        {"homoscedastic_mu_err": homo_mu_err,
         "homoscedastic_sigma_err": homo_sigma_err,
         "worked_var_err": var_err, "worked_mu_err": mu_err},
        {"max_abs_error": 1e-12},
        worst <= 1e-12,
    )


def eval_count_law_check(steps: int = 5, n: int = 3) -> dict:
    """Exact integer accounting: dual-pass modes with w != 1 cost 2x.

    Runs every guidance mode on a tiny fresh net and asserts
    eval_count == steps * n * (2 if dual-pass and w != 1 else 1).
    """
    from .flow import VelocityNet
    from .sampling import DistCFG, DualCFG, Joint, PGuide, Vanilla, sample_batch

    net = VelocityNet(dim=2, n_classes=2, hidden=(8,), embed_dim=4, fourier=2,
                      rng=Rng(11))
    prior = PriorModel(n_classes=2, dim=2)
    cases = [
        (Vanilla(y=0), 1),
        (PGuide(y=0, w=1.5), 1),
        (PGuide(y=1, w=1.0), 1),
        (DistCFG(y=0, w=1.2), 1),
        (DualCFG(y=0, w=1.5), 2),
        (DualCFG(y=1, w=1.0), 1),
        (Joint(y=0, w_pg=1.2, w_cfg=1.5), 2),
        (Joint(y=1, w_pg=1.2, w_cfg=1.0), 1),
    ]
    measured = []
    ok = True
    rng = Rng(3)
    for mode, passes in cases:
        res = sample_batch(net, prior, mode, n, steps, rng)
        expected = steps * n * passes
        measured.append({"mode": repr(mode), "eval_count": res.eval_count,
                         "expected": expected})
        ok = ok and res.eval_count == expected
    return make_report(
        "eval_count_law",
        {"steps": steps, "n": n},
        {"cases": measured},
        {"rule": "steps * n * (2 if dual-pass and w != 1 else 1)"},
        ok,
    )


def prior_bayes_check(prior: PriorModel, dataset, specs,
                      mean_tol: float = 0.05, sigma_rel_tol: float = 0.10) -> dict:
    """Trained prior tables against the generating mixture.

    Class means must sit within ``mean_tol`` of the analytic centers, class
    sigmas within ``sigma_rel_tol`` relative of the generating sigma
    (learnable mode only), and the null mean within ``mean_tol`` of the
    dataset's global mean.
    """
    by_label = sorted(specs, key=lambda s: s.label)
    centers = np.array([s.center for s in by_label], dtype=np.float64)
    sigmas = np.array([s.sigma for s in by_label], dtype=np.float64)
    mu_err = float(np.max(np.abs(prior.mu.value[:len(by_label)] - centers)))
    null_err = float(np.max(np.abs(prior.mu.value[prior.null_id]
                                   - dataset.x.mean(axis=0))))
    if prior.variance_mode == "learnable":
        trained_sigma = prior.sigma_table()[:len(by_label)]
        sigma_rel_err = float(np.max(np.abs(trained_sigma - sigmas[:, None])
                                     / sigmas[:, None]))
        sigma_ok = sigma_rel_err <= sigma_rel_tol
    else:
        sigma_rel_err = None
        sigma_ok = True
    passed = mu_err <= mean_tol and null_err <= mean_tol and sigma_ok
    return make_report(
        "prior_bayes_optimality",
        {"variance_mode": prior.variance_mode, "n_samples": len(dataset)},
        {"max_center_error": mu_err, "null_mean_error": null_err,
         "max_sigma_rel_error": sigma_rel_err},
        {"mean_tol": mean_tol, "sigma_rel_tol": sigma_rel_tol},
        passed,
    )


# ---------------------------------------------------------------------------
# qualitative stability report (never gated)


def gronwall_report(net, z0, y: int, w: float, steps: int = 50,
                    jac_h: float = 1e-4) -> dict:
    """Trajectory deviation of dual-pass guidance against its integral bound.

    Integrates the unconditional and the guided trajectory from the same
    start, accumulates the guidance perturbation ||w (v_c - v_u)|| along the
    guided path, and compares the endpoint deviation with
    exp(L_hat * t) * integral, where L_hat is a finite-difference estimate of
    the velocity Jacobian norm (not a certified Lipschitz constant). Reported
    for context only; never gated.
    """
    z0 = np.asarray(z0, dtype=np.float64).reshape(1, -1)
    dt = 1.0 / steps
    x_u = z0.copy()
    x_g = z0.copy()
    integral = 0.0
    lip = 0.0
    d = z0.shape[1]
    deviations = [0.0]
    for k in range(steps):
        t = k * dt
        v_u_at_g = net.forward(x_g, t, net.null_id)
        v_c_at_g = net.forward(x_g, t, y)
        v_g = v_u_at_g + w * (v_c_at_g - v_u_at_g)
        v_u = net.forward(x_u, t, net.null_id)
        integral += float(np.linalg.norm(w * (v_c_at_g - v_u_at_g))) * dt
        if k % max(1, steps // 10) == 0:
            Jv = np.empty((d, d))
            for i in range(d):
                e = np.zeros((1, d))
                e[0, i] = jac_h
                Jv[:, i] = (net.forward(x_u + e, t, net.null_id)
                            - net.forward(x_u - e, t, net.null_id))[0] / (2 * jac_h)
            lip = max(lip, float(np.linalg.norm(Jv, 2)))
        x_u = x_u + v_u * dt
        x_g = x_g + v_g * dt
        deviations.append(float(np.linalg.norm(x_g - x_u)))
    bound = float(np.exp(lip) * integral)
    return make_report(
        "gronwall_context",
        {"w": w, "y": y, "steps": steps, "lipschitz_estimate": lip},
        {"max_deviation": max(deviations), "endpoint_deviation": deviations[-1],
         "integral_bound_at_t1": bound},
        {"gated": False},
        True,
    )
