"""Conditional velocity field v(x, t, y) and its two training regimes:
a dropout-based baseline (for dual-pass guidance at sampling time) and
stage-2 training that draws starting points from a frozen learned prior.

The network is a small tanh MLP over [x | time features | class embedding].
Time enters as raw t plus Fourier pairs sin/cos(2^k pi t); the class
embedding table carries one extra row for the null condition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numcore import (
    ParamTensor,
    Rng,
    TrainingError,
    adam_step,
    affine_backward,
    affine_forward,
    normal_sample,
    require_finite,
    tanh_backward,
    tanh_forward,
    zero_grads,
)
from .prior import CheckpointError, PriorModel, prior_rows

__all__ = [
    "VelocityNet",
    "FlowTrainConfig",
    "time_features",
    "velocity_forward",
    "path_interp",
    "fm_loss",
    "train_flow",
    "save_flow",
    "load_flow",
    "FLOW_MAGIC",
]

FLOW_MAGIC = "PGUIDE-FLOW-v1"

REGIMES = ("cfm_baseline", "pguide_stage2")


def time_features(t: np.ndarray, fourier: int) -> np.ndarray:
    """Raw t plus ``fourier`` sin/cos pairs at frequencies 2^k pi, k=0..F-1."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    cols = [t]
    for k in range(fourier):
        a = (2.0 ** k) * np.pi * t
        cols.append(np.sin(a))
        cols.append(np.cos(a))
    return np.concatenate(cols, axis=1)


class VelocityNet:
    """Tanh MLP velocity field conditioned on time and a class id.

    The output head is zero-initialized, so a fresh net predicts v = 0
    everywhere; hidden weights use 1/sqrt(fan_in) normal init drawn from the
    supplied rng (embedding first, then layers in order).
    """

    def __init__(self, dim: int, n_classes: int, hidden=(128, 128, 128),
                 embed_dim: int = 16, fourier: int = 8, rng: Rng | None = None):
        if rng is None:
            rng = Rng(0)
        self.dim = dim
        self.n_classes = n_classes
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = embed_dim
        self.fourier = fourier
        self.time_width = 2 * fourier + 1
        self.input_width = dim + self.time_width + embed_dim

        scale = 1.0 / np.sqrt(embed_dim)
        self.class_embed = ParamTensor(
            scale * normal_sample(rng, n_classes + 1, embed_dim),
            name="flow.class_embed")
        self.layers = []
        widths = [self.input_width, *self.hidden]
        for i in range(len(self.hidden)):
            fan_in, fan_out = widths[i], widths[i + 1]
            W = ParamTensor(normal_sample(rng, fan_in, fan_out) / np.sqrt(fan_in),
                            name=f"flow.h{i}.W")
            b = ParamTensor(np.zeros((1, fan_out)), name=f"flow.h{i}.b")
            self.layers.append((W, b))
        self.head_W = ParamTensor(np.zeros((widths[-1], dim)), name="flow.head.W")
        self.head_b = ParamTensor(np.zeros((1, dim)), name="flow.head.b")

    @property
    def null_id(self) -> int:
        return self.n_classes

    def params(self):
        out = [self.class_embed]
        for W, b in self.layers:
            out += [W, b]
        out += [self.head_W, self.head_b]
        return out

    def _inputs(self, x, t, y):
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
        feats = time_features(t, self.fourier)
        emb = self.class_embed.value[y]
        return np.concatenate([x, feats, emb], axis=1), y

    def forward(self, x, t, y) -> np.ndarray:
        """Velocity for a batch of states; t and y may be scalars or per-row."""
        h, _ = self._inputs(x, t, y)
        for W, b in self.layers:
            h = tanh_forward(affine_forward(h, W, b))
        return affine_forward(h, self.head_W, self.head_b)

    def forward_cached(self, x, t, y):
        inp, y = self._inputs(x, t, y)
        h = inp
        acts = []
        for W, b in self.layers:
            out = tanh_forward(affine_forward(h, W, b))
            acts.append((h, out))
            h = out
        v = affine_forward(h, self.head_W, self.head_b)
        return v, (inp, acts, y)

    def backward(self, cache, grad_v) -> None:
        """Accumulate parameter grads for a cached forward pass."""
        inp, acts, y = cache
        last = acts[-1][1] if acts else inp
        g = affine_backward(last, self.head_W, self.head_b, grad_v)
        for i in range(len(self.layers) - 1, -1, -1):
            layer_in, layer_out = acts[i]
            W, b = self.layers[i]
            g = affine_backward(layer_in, W, b, tanh_backward(layer_out, g))
        embed_cols = self.dim + self.time_width
        np.add.at(self.class_embed.grad, y, g[:, embed_cols:])


def velocity_forward(net, x, t, y) -> np.ndarray:
    """Checked velocity evaluation: t must lie in [0, 1], y in [0, K]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"state batch must be 2-D, got shape {x.shape}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"time out of [0, 1]: {t_arr}")
    y_arr = np.asarray(y, dtype=np.int64)
    null_id = getattr(net, "null_id", None)
    if null_id is not None and (np.any(y_arr < 0) or np.any(y_arr > null_id)):
        raise ValueError(f"condition id out of range [0, {null_id}]: {y_arr}")
    return require_finite(net.forward(x, t, y), "velocity output")


def path_interp(z, x1, t):
    """Linear path x_t = (1-t) z + t x1; t scalar or one value per row."""
    z = np.asarray(z, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"time out of [0, 1]: {t_arr}")
    if t_arr.ndim == 1:
        t_arr = t_arr.reshape(-1, 1)
    return (1.0 - t_arr) * z + t_arr * x1


def fm_loss(net: VelocityNet, z, x1, y, t, accumulate: bool = True) -> float:
    """Mean over the batch of ||v(x_t, t, y) - (x1 - z)||^2.

    The regression target is the constant path velocity x1 - z. With
    ``accumulate`` the parameter gradients are added into the net.
    """
    z = np.asarray(z, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if z.shape != x1.shape:
        raise ValueError(f"z shape {z.shape} != x1 shape {x1.shape}")
    xt = path_interp(z, x1, t)
    target = x1 - z
    v, cache = net.forward_cached(xt, t, y)
    r = v - target
    loss = float((r * r).sum(axis=1).mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite flow-matching loss")
    if accumulate:
        net.backward(cache, (2.0 / len(r)) * r)
    return loss


@dataclass
class FlowTrainConfig:
    """Hyperparameters for one velocity-field training run."""

    steps: int
    batch: int
    lr: float
    regime: str = "cfm_baseline"
    cond_dropout_p: float = 0.1
    stage2_dropout_p: float = 0.0  # optional null branch for joint guidance
    adam_betas: tuple = field(default=(0.9, 0.999))

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        for name in ("cond_dropout_p", "stage2_dropout_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


def train_flow(net: VelocityNet, dataset, cfg: FlowTrainConfig, rng: Rng,
               prior: PriorModel | None = None) -> list:
    """Train the velocity field; returns the per-step loss history.

    cfm_baseline: starting points are N(0, I) and each label is replaced by
    the null id with probability ``cond_dropout_p``, so the one net learns
    both conditional and unconditional velocities.

    pguide_stage2: starting points are mu(y) + sigma(y) * eps from the frozen
    ``prior`` and labels are fed as-is. If ``stage2_dropout_p`` > 0, dropped
    rows switch both the seed and the label to the null condition, which
    trains a usable unconditional branch for joint guidance.

    Per-step rng draw order (fixed for reproducibility): batch indices, then
    noise, then dropout uniforms (if any), then per-sample times.
    """
    if cfg.regime == "pguide_stage2":
        if prior is None:
            raise ValueError("pguide_stage2 requires a frozen prior model")
        if prior.dim != net.dim or prior.n_classes != net.n_classes:
            raise ValueError("prior shape does not match the velocity net")
    elif cfg.cond_dropout_p <= 0.0:
        raise ValueError("cfm_baseline needs cond_dropout_p > 0 so the null "
                         "branch gets trained")
    n_data = len(dataset)
    params = net.params()
    beta1, beta2 = cfg.adam_betas
    history = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(cfg.batch, n_data)
        x1 = dataset.x[idx]
        y = dataset.y[idx]
        if cfg.regime == "cfm_baseline":
            z = normal_sample(rng, cfg.batch, net.dim)
            drop = rng.uniform(cfg.batch) < cfg.cond_dropout_p
            y_fed = np.where(drop, net.null_id, y)
        else:
            eps = normal_sample(rng, cfg.batch, net.dim)
            mu, sigma = prior_rows(prior, y)
            z = mu + sigma * eps
            y_fed = y
            if cfg.stage2_dropout_p > 0.0:
                drop = rng.uniform(cfg.batch) < cfg.stage2_dropout_p
                mu_n, sigma_n = prior_rows(prior,
                                           np.full(cfg.batch, prior.null_id))
                z = np.where(drop[:, None], mu_n + sigma_n * eps, z)
                y_fed = np.where(drop, net.null_id, y)
        t = rng.uniform(cfg.batch)
        zero_grads(params)
        try:
            loss = fm_loss(net, z, x1, y_fed, t)
            adam_step(params, lr=cfg.lr, beta1=beta1, beta2=beta2, t=step)
        except TrainingError as err:
            raise TrainingError(f"flow training diverged at step {step}: {err}",
                                history=history) from err
        history.append(loss)
    return history


# ---------------------------------------------------------------------------
# checkpoint io


def save_flow(net: VelocityNet, path, config_echo: dict | None = None) -> None:
    doc = {
        "magic": FLOW_MAGIC,
        "arch": {
            "dim": net.dim,
            "n_classes": net.n_classes,
            "hidden": list(net.hidden),
            "embed_dim": net.embed_dim,
            "fourier": net.fourier,
        },
        "class_embed": net.class_embed.value.tolist(),
        "layers": [{"W": W.value.tolist(), "b": b.value.tolist()}
                   for W, b in net.layers],
        "head": {"W": net.head_W.value.tolist(), "b": net.head_b.value.tolist()},
        "config": config_echo or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_flow(path):
    """Load a velocity-net checkpoint; returns (net, config_echo)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read flow checkpoint {path}: {err}") from err
    if doc.get("magic") != FLOW_MAGIC:
        raise CheckpointError(
            f"{path}: magic {doc.get('magic')!r} != expected {FLOW_MAGIC!r}")
    arch = doc["arch"]
    net = VelocityNet(arch["dim"], arch["n_classes"], hidden=arch["hidden"],
                      embed_dim=arch["embed_dim"], fourier=arch["fourier"])
    try:
        net.class_embed.value[:] = np.asarray(doc["class_embed"], dtype=np.float64)
        for (W, b), saved in zip(net.layers, doc["layers"], strict=True):
            W.value[:] = np.asarray(saved["W"], dtype=np.float64)
            b.value[:] = np.asarray(saved["b"], dtype=np.float64)
        net.head_W.value[:] = np.asarray(doc["head"]["W"], dtype=np.float64)
        net.head_b.value[:] = np.asarray(doc["head"]["b"], dtype=np.float64)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"{path}: malformed parameter block: {err}") from err
    return net, doc.get("config", {})
