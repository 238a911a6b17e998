"""Per-condition Gaussian prior: heteroscedastic NLL training, guided seeds,
and the closed-form distribution-space guidance parameters.

The model is a lookup table of (mu, log sigma) rows, one per class plus a
trailing null row (index K) that stands in for "no condition" and is fitted
against the whole data marginal. A fresh model has mu = 0 and sigma = 1, so
untrained it reduces to the standard N(0, I) prior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numcore import ParamTensor, Rng, TrainingError, adam_step, zero_grads

__all__ = [
    "PriorModel",
    "GuidedSeedConfig",
    "PrecisionDomainError",
    "CheckpointError",
    "prior_forward",
    "prior_rows",
    "nll_loss",
    "nll_mu_sigma_grads",
    "train_prior",
    "guided_seed",
    "combined_scale",
    "dist_cfg_params",
    "save_prior",
    "load_prior",
    "PRIOR_MAGIC",
]

PRIOR_MAGIC = "PGUIDE-PRIOR-v1"

VARIANCE_MODES = ("learnable", "fixed-unit")
SEED_VARIANTS = ("full", "mean_only")

# keeps the NLL from collapsing sigma on near-duplicate samples
LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 3.0


class PrecisionDomainError(ValueError):
    """Combined precision of the distribution-space mixture is not positive."""


class CheckpointError(ValueError):
    """Checkpoint file is missing, mislabeled, or structurally invalid."""


@dataclass(frozen=True)
class GuidedSeedConfig:
    """Guidance scale and seed-construction variant for prior-space steering."""

    w: float
    variant: str = "full"

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.w}")
        if self.variant not in SEED_VARIANTS + ("dist_cfg",):
            raise ValueError(f"unknown seed variant {self.variant!r}")


class PriorModel:
    """(K+1) x d tables of means and log-stds; row K is the null condition."""

    def __init__(self, n_classes: int, dim: int, variance_mode: str = "learnable"):
        if n_classes < 1 or dim < 1:
            raise ValueError("need n_classes >= 1 and dim >= 1")
        if variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        self.n_classes = n_classes
        self.dim = dim
        self.variance_mode = variance_mode
        self.mu = ParamTensor(np.zeros((n_classes + 1, dim)), name="prior.mu")
        self.log_sigma = ParamTensor(np.zeros((n_classes + 1, dim)),
                                     name="prior.log_sigma")

    @property
    def null_id(self) -> int:
        return self.n_classes

    def params(self):
        if self.variance_mode == "fixed-unit":
            return [self.mu]
        return [self.mu, self.log_sigma]

    def sigma_table(self) -> np.ndarray:
        if self.variance_mode == "fixed-unit":
            return np.ones_like(self.log_sigma.value)
        return np.exp(self.log_sigma.value)


def _check_condition(model: PriorModel, y: int) -> int:
    y = int(y)
    if not 0 <= y <= model.null_id:
        raise ValueError(f"condition id {y} out of range [0, {model.null_id}]")
    return y


def prior_forward(model: PriorModel, y: int):
    """Return (mu, sigma) row vectors for condition ``y`` (null id allowed)."""
    y = _check_condition(model, y)
    return model.mu.value[y].copy(), model.sigma_table()[y].copy()


def prior_rows(model: PriorModel, y: np.ndarray):
    """Batched (mu, sigma) lookup for an int array of condition ids."""
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() > model.null_id):
        raise ValueError(f"condition ids out of range [0, {model.null_id}]")
    return model.mu.value[y], model.sigma_table()[y]


def nll_mu_sigma_grads(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray):
    """Elementwise Gaussian-NLL gradients for one (x, mu, sigma) triple.

    d/dmu of (x-mu)^2/(2 sigma^2) is -(x-mu)/sigma^2: the residual pull is
    attenuated by the inverse variance. d/d(log sigma) is 1 - (x-mu)^2/sigma^2.
    """
    inv_var = 1.0 / (sigma * sigma)
    r = x - mu
    return -r * inv_var, 1.0 - (r * r) * inv_var


def nll_loss(model: PriorModel, batch, accumulate: bool = True) -> float:
    """Gaussian NLL of the batch under its labeled rows, averaged over samples.

    Per sample the loss is sum_j [(x_j - mu_j)^2 / (2 sigma_j^2) +
    0.5 log sigma_j^2]; the batch reduces by mean. With ``accumulate`` the
    mu/log-sigma gradients are added into the model's grad buffers.
    """
    x = batch.x
    y = batch.y
    if y.size == 0:
        return 0.0
    if y.min() < 0 or y.max() > model.null_id:
        raise ValueError(f"batch labels out of range [0, {model.null_id}]")
    mu, sigma = prior_rows(model, y)
    r = x - mu
    inv_var = 1.0 / (sigma * sigma)
    per_elem = 0.5 * r * r * inv_var + np.log(sigma)
    loss = float(per_elem.sum(axis=1).mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite prior NLL")
    if accumulate:
        n = len(y)
        g_mu, g_ls = nll_mu_sigma_grads(x, mu, sigma)
        np.add.at(model.mu.grad, y, g_mu / n)
        if model.variance_mode == "learnable":
            np.add.at(model.log_sigma.grad, y, g_ls / n)
    return loss


def train_prior(model: PriorModel, dataset, epochs: int, lr: float,
                rng: Rng | None = None) -> list:
    """Fit the prior tables by full-batch Adam on the Gaussian NLL.

    Each epoch takes one full-batch step on two terms: the labeled rows
    against their class samples, and the null row against every sample (the
    null condition models the data marginal). Returns the loss history.
    ``rng`` is unused by the full-batch schedule but kept for signature parity
    with the minibatch trainers.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    counts = np.bincount(dataset.y, minlength=model.n_classes)
    if np.any(counts == 0):
        raise ValueError(f"every class needs >= 1 sample, got counts {counts.tolist()}")
    null_view = type(dataset)(x=dataset.x,
                              y=np.full(len(dataset), model.null_id, dtype=np.int64))
    params = model.params()
    history = []
    for step in range(1, epochs + 1):
        zero_grads(params)
        try:
            loss = nll_loss(model, dataset) + nll_loss(model, null_view)
            adam_step(params, lr=lr, t=step)
        except TrainingError as err:
            raise TrainingError(f"prior training diverged at epoch {step}: {err}",
                                history=history) from err
        if model.variance_mode == "learnable":
            np.clip(model.log_sigma.value, LOG_SIGMA_MIN, LOG_SIGMA_MAX,
                    out=model.log_sigma.value)
        history.append(loss)
    return history


# ---------------------------------------------------------------------------
# prior-space guidance


def combined_scale(model: PriorModel, y: int, w: float):
    """Extrapolated seed scale sigma_u + w (sigma_c - sigma_u), clamped at 0.

    Returns (scale, n_clamped) where n_clamped counts dimensions whose
    extrapolated scale went negative and was clamped; callers surface the
    count as a sampling warning.
    """
    y = _check_condition(model, y)
    sig = model.sigma_table()
    scale = sig[model.null_id] + w * (sig[y] - sig[model.null_id])
    clamped = int(np.sum(scale < 0.0))
    if clamped:
        scale = np.maximum(scale, 0.0)
    return scale, clamped


def guided_seed(model: PriorModel, y: int, w: float, eps: np.ndarray,
                variant: str = "full") -> np.ndarray:
    """Construct a guided initial state from the prior tables and base noise.

    ``full`` extrapolates both mean and scale between the null and
    conditional rows; ``mean_only`` extrapolates the mean but keeps the
    conditional scale. w = 1 and w = 0 short-circuit to the exact conditional
    and unconditional seeds so those reductions are bit-exact.
    """
    y = _check_condition(model, y)
    if y == model.null_id:
        raise ValueError("guided_seed needs a class condition, not the null id")
    if variant not in SEED_VARIANTS:
        raise ValueError(f"unknown guided_seed variant {variant!r}")
    eps = np.asarray(eps, dtype=np.float64)
    mu = model.mu.value
    sig = model.sigma_table()
    u = model.null_id
    if w == 1.0:
        mean = mu[y]
        scale = sig[y]
    elif w == 0.0:
        mean = mu[u]
        scale = sig[u] if variant == "full" else sig[y]
    else:
        mean = mu[u] + w * (mu[y] - mu[u])
        scale = combined_scale(model, y, w)[0] if variant == "full" else sig[y]
    return mean + scale * eps


def dist_cfg_params(model: PriorModel, y: int, w: float):
    """Mean and scale of the distribution-space guidance Gaussian.

    Elementwise: 1/sigma_cfg^2 = (1-w)/sigma_u^2 + w/sigma_c^2 and
    mu_cfg = sigma_cfg^2 [(1-w) mu_u/sigma_u^2 + w mu_c/sigma_c^2]. The
    combined precision must be positive in every dimension. w = 1 returns
    the conditional row exactly.
    """
    y = _check_condition(model, y)
    if y == model.null_id:
        raise ValueError("dist_cfg_params needs a class condition, not the null id")
    mu = model.mu.value
    sig = model.sigma_table()
    u = model.null_id
    if w == 1.0:
        return mu[y].copy(), sig[y].copy()
    precision = (1.0 - w) / (sig[u] ** 2) + w / (sig[y] ** 2)
    bad = np.flatnonzero(precision <= 0.0)
    if bad.size:
        j = int(bad[0])
        raise PrecisionDomainError(
            f"combined precision {precision[j]:.6g} <= 0 at dimension {j} "
            f"(w={w}, sigma_u={sig[u][j]:.6g}, sigma_c={sig[y][j]:.6g})")
    var_cfg = 1.0 / precision
    mu_cfg = var_cfg * ((1.0 - w) * mu[u] / (sig[u] ** 2) + w * mu[y] / (sig[y] ** 2))
    return mu_cfg, np.sqrt(var_cfg)


# ---------------------------------------------------------------------------
# checkpoint io


def save_prior(model: PriorModel, path, config_echo: dict | None = None) -> None:
    doc = {
        "magic": PRIOR_MAGIC,
        "n_classes": model.n_classes,
        "dim": model.dim,
        "variance_mode": model.variance_mode,
        "mu": model.mu.value.tolist(),
        "log_sigma": model.log_sigma.value.tolist(),
        "config": config_echo or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_prior(path) -> PriorModel:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read prior checkpoint {path}: {err}") from err
    if doc.get("magic") != PRIOR_MAGIC:
        raise CheckpointError(
            f"{path}: magic {doc.get('magic')!r} != expected {PRIOR_MAGIC!r}")
    model = PriorModel(doc["n_classes"], doc["dim"], doc["variance_mode"])
    mu = np.asarray(doc["mu"], dtype=np.float64)
    log_sigma = np.asarray(doc["log_sigma"], dtype=np.float64)
    if mu.shape != model.mu.shape or log_sigma.shape != model.log_sigma.shape:
        raise CheckpointError(f"{path}: table shapes do not match header")
    model.mu.value[:] = mu
    model.log_sigma.value[:] = log_sigma
    return model
