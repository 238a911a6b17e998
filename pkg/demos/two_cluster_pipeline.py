"""End-to-end walkthrough on the two-cluster dataset.

Trains the per-condition Gaussian prior (stage 1), trains the velocity field
from that frozen prior (stage 2), then sweeps the guidance scale and compares
prior-space steering (single pass) against dual-pass velocity extrapolation,
printing nearest-mode accuracy and the exact model-evaluation counts.

Run from the repo root:  python3 demos/two_cluster_pipeline.py
Artifacts land in demo_out/. Takes about a minute on one core.
"""

import os
import time

import numpy as np

from pguide import (
    FlowTrainConfig,
    PriorModel,
    Rng,
    VelocityNet,
    train_flow,
    train_prior,
)
from pguide.data import gen_two_mode, two_mode_specs
from pguide.sampling import (
    DualCFG,
    PGuide,
    sample_batch,
    write_samples_csv,
    write_trajectories_csv,
)
from pguide.verify import mode_accuracy

OUT = "demo_out"
SEED = 7
N_PER_CLASS = 400
STEPS = 50


def sample_all_classes(net, prior, make_mode, rng, record=False):
    results = []
    for y in range(net.n_classes):
        results.append(sample_batch(net, prior, make_mode(y), N_PER_CLASS,
                                    STEPS, rng, record=record))
    samples = np.concatenate([r.samples for r in results])
    labels = np.concatenate([np.full(len(r.samples), r.label) for r in results])
    evals = sum(r.eval_count for r in results)
    return results, samples, labels, evals


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = Rng(SEED)
    specs = two_mode_specs()

    print("== data: two Gaussian clusters on a radius-5 ring ==")
    data = gen_two_mode(10_000, rng.spawn(0))
    for spec in specs:
        print(f"  class {spec.label}: center {np.round(spec.center, 3)}, "
              f"sigma {spec.sigma}")

    print("\n== stage 1: fit the per-condition prior (mean-only) ==")
    prior = PriorModel(2, 2, variance_mode="fixed-unit")
    hist = train_prior(prior, data, epochs=400, lr=0.05, rng=rng.spawn(1))
    print(f"  final NLL {hist[-1]:.4f}")
    print(f"  learned means:\n{np.round(prior.mu.value, 3)}")
    print("  (row 2 is the null condition: the data marginal's mean)")

    print("\n== stage 2: train the velocity field from the frozen prior ==")
    t0 = time.time()
    net = VelocityNet(2, 2, rng=rng.spawn(2))
    cfg = FlowTrainConfig(steps=4000, batch=256, lr=2e-3,
                          regime="pguide_stage2")
    fh = train_flow(net, data, cfg, rng.spawn(3), prior=prior)
    print(f"  loss {fh[0]:.3f} -> {np.mean(fh[-100:]):.3f} "
          f"({time.time() - t0:.0f}s)")

    # a dropout-trained baseline provides the unconditional branch that
    # dual-pass guidance extrapolates against
    print("\n== baseline: dropout-trained field for dual-pass guidance ==")
    baseline = VelocityNet(2, 2, rng=rng.spawn(2))
    bh = train_flow(baseline, data,
                    FlowTrainConfig(steps=4000, batch=256, lr=2e-3,
                                    regime="cfm_baseline", cond_dropout_p=0.1),
                    rng.spawn(4))
    print(f"  loss {bh[0]:.3f} -> {np.mean(bh[-100:]):.3f}")

    print("\n== guidance sweep: single-pass prior steering vs dual-pass ==")
    print(f"  {N_PER_CLASS} samples/class, {STEPS} integration steps")
    print("  mode        w     accuracy   net evals")
    srng = rng.spawn(5)
    for w in (1.0, 1.1, 1.5, 2.0):
        _, s, l, evals = sample_all_classes(
            net, prior, lambda y: PGuide(y=y, w=w), srng)
        acc = mode_accuracy(s, l, specs).overall
        print(f"  pguide    {w:4.1f}    {acc:7.4f}   {evals:8d}  (single pass)")
    for w in (1.0, 1.5, 2.0):
        _, s, l, evals = sample_all_classes(
            baseline, None, lambda y: DualCFG(y=y, w=w), srng)
        acc = mode_accuracy(s, l, specs).overall
        passes = "single pass" if w == 1.0 else "dual pass"
        print(f"  dual_cfg  {w:4.1f}    {acc:7.4f}   {evals:8d}  ({passes})")
    print("  note: prior-space steering has a narrow effective range; at")
    print("  w=2.0 the extrapolated seeds overshoot the 4-sigma assignment")
    print("  ball of this geometry, so nearest-mode accuracy drops while")
    print("  class separation keeps increasing.")

    # the overshoot is intrinsic, not a training artifact: the ideal
    # transport between N(mu, s_p^2 I) and N(c, s_d^2 I) is the affine map
    # z -> c + (s_d/s_p)(z - mu), so a seed shifted (w-1)(mu_y - mu_null)
    # lands (s_d/s_p)(w-1)||mu_y - mu_null|| past the cluster center
    delta = np.linalg.norm(np.array(specs[0].center) - prior.mu.value[2])
    contraction = specs[0].sigma / 1.0      # data sigma over prior sigma
    print("\n  closed-form endpoint offset under the ideal transport:")
    for w in (1.0, 1.5, 2.0):
        offset = contraction * (w - 1.0) * delta
        print(f"    w={w}: offset {offset:.3f} "
              f"(assignment radius {4 * specs[0].sigma:.1f})")

    print("\n== export one recorded batch ==")
    results, _, _, _ = sample_all_classes(
        net, prior, lambda y: PGuide(y=y, w=1.5), srng, record=True)
    write_samples_csv(os.path.join(OUT, "samples.csv"), results)
    write_trajectories_csv(os.path.join(OUT, "trajectories.csv"), results)
    print(f"  wrote {OUT}/samples.csv and {OUT}/trajectories.csv")


if __name__ == "__main__":
    main()
