"""Distribution-space guidance as a comparison exhibit.

Guidance can also be applied by exponentially tilting the two seed
Gaussians, p_u^(1-w) * p_c^w, which stays Gaussian with a closed-form mean
and scale. With equal variances that Gaussian coincides with the prior-space
guided seed; with learned (unequal) variances the two constructions genuinely
differ, and this script puts the paired numbers side by side on the
two-cluster task: seed moments, the analytic scale gap, and nearest-mode
accuracy over several seeds.

Run from the repo root:  python3 demos/distribution_space_guidance.py
"""

import numpy as np

from pguide import FlowTrainConfig, PriorModel, Rng, VelocityNet, train_flow, train_prior
from pguide.data import gen_two_mode, two_mode_specs
from pguide.prior import combined_scale, dist_cfg_params
from pguide.sampling import DistCFG, PGuide, sample_batch
from pguide.verify import mode_accuracy, seed_stat_check

W = 1.5
N_PER_CLASS = 300
STEPS = 50


def main():
    rng = Rng(1)
    specs = two_mode_specs()
    data = gen_two_mode(10_000, rng.spawn(0))

    print("== learnable-variance prior ==")
    prior = PriorModel(2, 2, variance_mode="learnable")
    train_prior(prior, data, epochs=800, lr=0.05, rng=rng.spawn(1))
    print(f"  class sigmas:\n{np.round(prior.sigma_table()[:2], 3)}")
    print(f"  null sigma:   {np.round(prior.sigma_table()[2], 3)} "
          "(wide: it models the whole mixture)")

    print(f"\n== the two guided-seed constructions at w={W} ==")
    pg_scale, clamped = combined_scale(prior, 0, W)
    mu_cfg, dc_scale = dist_cfg_params(prior, 0, W)
    print(f"  prior-space scale (class 0): {np.round(pg_scale, 3)} "
          f"({clamped} dims clamped at 0)")
    print(f"  dist-space scale  (class 0): {np.round(dc_scale, 3)}")
    print(f"  dist-space mean   (class 0): {np.round(mu_cfg, 3)} "
          f"vs class mean {np.round(prior.mu.value[0], 3)}")
    rep = seed_stat_check(prior, "pguide_full", W, 4000, rng.spawn(2))
    print(f"  empirical seed moments match analytic: {rep['pass']}; "
          f"scale gap {rep['measured']['prior_vs_dist_scale_gap']:.3f}")

    print("\n== stage-2 field from this prior ==")
    net = VelocityNet(2, 2, rng=rng.spawn(3))
    train_flow(net, data,
               FlowTrainConfig(steps=4000, batch=256, lr=2e-3,
                               regime="pguide_stage2"),
               rng.spawn(4), prior=prior)

    print(f"\n== paired nearest-mode accuracy at w={W} over 3 seeds ==")
    print("  seed   pguide   dist_cfg")
    pg_all, dc_all = [], []
    for seed in (1, 2, 3):
        accs = {}
        for tag, make in (("pguide", lambda y: PGuide(y=y, w=W)),
                          ("dist_cfg", lambda y: DistCFG(y=y, w=W))):
            srng = Rng(seed).spawn(5)
            samples, labels = [], []
            for y in (0, 1):
                res = sample_batch(net, prior, make(y), N_PER_CLASS, STEPS, srng)
                samples.append(res.samples)
                labels.append(np.full(N_PER_CLASS, y))
            accs[tag] = mode_accuracy(np.concatenate(samples),
                                      np.concatenate(labels), specs).overall
        pg_all.append(accs["pguide"])
        dc_all.append(accs["dist_cfg"])
        print(f"  {seed}      {accs['pguide']:.4f}   {accs['dist_cfg']:.4f}")
    print(f"  mean   {np.mean(pg_all):.4f}   {np.mean(dc_all):.4f}")
    print("\n  On this geometry the distribution-space Gaussian at w=1.5 stays")
    print("  close to the conditional prior (its precision combination is")
    print("  dominated by the tight class variance), while the prior-space")
    print("  extrapolated mean overshoots the cluster; both effects are")
    print("  visible above, and both seed constructions coincide exactly in")
    print("  the equal-variance case.")


if __name__ == "__main__":
    main()
