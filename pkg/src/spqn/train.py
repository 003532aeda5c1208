"""Maximum-likelihood training by gradient ascent on the mean log-likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .evaluate import mean_log_likelihood, program
from .graph import STAR, Network, as_evidence_batch
from .params import ParamVector

log = logging.getLogger(__name__)


class ZeroProbabilitySample(ArithmeticError):
    def __init__(self, index: int):
        super().__init__(f"sample {index} has zero probability under the model")
        self.index = index


def grad_mean_log_likelihood(network: Network, params: ParamVector, batch) -> tuple[float, np.ndarray]:
    """Mean log-likelihood of ``batch`` and its gradient w.r.t. every logit.

    Frozen blocks get a gradient too; the optimizer is responsible for
    ignoring it.
    """
    x = as_evidence_batch(batch, network.num_vars)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if (x == STAR).any():
        from .validate import star_pattern_ok

        if not star_pattern_ok(network, x).all():
            raise ValueError("batch contains Star patterns the network cannot marginalize exactly")
    prog = program(network)
    lw = prog.extended_log_weights(params)
    vals = prog.forward(lw, x)
    root = vals[network.root]
    dead = np.flatnonzero(np.isneginf(root))
    if dead.size:
        raise ZeroProbabilitySample(int(dead[0]))
    _, glw = prog.backward(lw, vals, np.full(x.shape[0], 1.0 / x.shape[0]))
    glw = glw[:-1]
    # softmax Jacobian, block by block: d/dz_k = g_k - p_k * sum_j g_j
    p = np.exp(lw[:-1])
    block_sum = np.bincount(prog.block_of, weights=glw, minlength=len(network.blocks))
    grad = glw - p * block_sum[prog.block_of]
    return float(root.mean()), grad


@dataclass
class TrainConfig:
    learning_rate: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 100
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")


@dataclass
class AdamState:
    params: ParamVector
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, params: ParamVector) -> AdamState:
        return cls(params.copy(), np.zeros_like(params.logits), np.zeros_like(params.logits))


def adam_step(state: AdamState, grad: np.ndarray, config: TrainConfig,
              mask: np.ndarray | None = None) -> AdamState:
    """One bias-corrected Adam update in the ascent direction.  Updates in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise FloatingPointError(f"non-finite gradient at {bad.size} coordinates, first {bad[:5].tolist()}")
    if mask is not None:
        grad = np.where(mask, grad, 0.0)
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    state.params.logits = state.params.logits + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return state


@dataclass
class EpochRecord:
    epoch: int
    train_ll: float
    valid_ll: float


@dataclass
class TrainResult:
    params: ParamVector
    history: list[EpochRecord] = field(default_factory=list)


def train(network: Network, params: ParamVector, train_set, valid_set, config: TrainConfig,
          callback=None) -> TrainResult:
    """Mini-batch Adam on the mean log-likelihood.

    Shuffling uses a generator seeded with ``config.seed``; the gradient is
    reduced in a fixed order, so the run is reproducible bit for bit.
    ``train_ll`` is the full-training-set mean log-likelihood after the epoch.
    """
    xtr = as_evidence_batch(train_set, network.num_vars)
    xva = as_evidence_batch(valid_set, network.num_vars)
    if xtr.shape[0] == 0 or xva.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState.fresh(params)
    mask = params.trainable_mask()
    history = []
    for epoch in range(1, config.epochs + 1):
        idx = rng.permutation(xtr.shape[0]) if config.shuffle else np.arange(xtr.shape[0])
        for lo in range(0, len(idx), config.batch_size):
            _, grad = grad_mean_log_likelihood(network, state.params, xtr[idx[lo:lo + config.batch_size]])
            adam_step(state, grad, config, mask)
        rec = EpochRecord(epoch, mean_log_likelihood(network, state.params, xtr),
                          mean_log_likelihood(network, state.params, xva))
        log.info("epoch=%d train_ll=%.6f valid_ll=%.6f", rec.epoch, rec.train_ll, rec.valid_ll)
        history.append(rec)
        if callback is not None:
            callback(rec)
    return TrainResult(state.params, history)
