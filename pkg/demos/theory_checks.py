"""Numerical checks behind prior-space guidance, printed as report blocks.

Covers the analytic identities (score connection, loss attenuation, the
closed-form distribution-space guidance Gaussian, exact evaluation counting)
and the trajectory-linearization measurements on a quickly trained field:
Taylor remainders of the flow map and along-trajectory velocity differences
should scale quadratically in the seed perturbation, and a linear field
should come out exactly linear.

Run from the repo root:  python3 demos/theory_checks.py
"""

import json

import numpy as np

from pguide import FlowTrainConfig, PriorModel, Rng, VelocityNet, train_flow, train_prior
from pguide.data import ModeSpec, gen_two_mode
from pguide.verify import (
    LinearField,
    dist_cfg_closed_form_check,
    eval_count_law_check,
    flow_jacobian,
    grad_attenuation_check,
    linear_response_check,
    score_connection_check,
    velocity_response_check,
)

EPS = [0.1, 0.05, 0.025, 0.0125]


def show(block):
    print(json.dumps(block, indent=2, default=str))


def main():
    print("== analytic identities (no training required) ==")
    mix = [ModeSpec(center=(-2.0,), sigma=0.8, label=0),
           ModeSpec(center=(1.5,), sigma=0.6, label=1)]
    grid = np.linspace(-5.0, 5.0, 100).reshape(-1, 1)
    show(score_connection_check(mix, [0.5, 0.5], 0.7, grid))
    show(grad_attenuation_check())
    show(dist_cfg_closed_form_check())
    show(eval_count_law_check())

    print("\n== linear field: responses are exactly linear ==")
    A = np.array([[0.0, 0.4], [-0.4, 0.1]])
    field = LinearField(A)
    rep = linear_response_check(field, np.array([0.5, -0.3]),
                                np.array([1.0, 0.7]), 1.0, EPS)
    show(rep.report())
    J = flow_jacobian(field, np.array([0.5, -0.3]), 1.0, steps=2048)
    print(f"flow Jacobian of the linear field (matches exp(A)):\n{np.round(J, 5)}")

    print("\n== trained field: remainders scale quadratically ==")
    rng = Rng(3)
    data = gen_two_mode(8000, rng.spawn(0))
    prior = PriorModel(2, 2, variance_mode="fixed-unit")
    train_prior(prior, data, epochs=300, lr=0.05)
    net = VelocityNet(2, 2, rng=rng.spawn(1))
    train_flow(net, data,
               FlowTrainConfig(steps=2500, batch=256, lr=2e-3,
                               regime="pguide_stage2"),
               rng.spawn(2), prior=prior)
    probe_rng = Rng(11)
    for p in range(2):
        y = p % 2
        z_u = prior.mu.value[y] + probe_rng.normal(2)
        dz = probe_rng.normal(2)
        dz /= np.linalg.norm(dz)
        rep = linear_response_check(net, z_u, dz, 1.0, EPS, y=y)
        print(f"probe {p}: state remainder exponent "
              f"{rep.fitted_exponent:.3f}, remainders "
              f"{[f'{r:.2e}' for r in rep.remainders]}")
        vrep = velocity_response_check(net, z_u, dz, [0.1, 0.3, 0.5, 0.7, 0.9],
                                       EPS, y=y)
        print(f"probe {p}: velocity homogeneity exponent "
              f"{vrep['aggregate_exponent']:.3f} "
              f"(per-time {[round(e, 2) for e in vrep['per_time_exponents']]})")


if __name__ == "__main__":
    main()
