"""Unconstrained logits mapped to normalized sum-node weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Block


@dataclass
class ParamVector:
    """Flat logit vector plus the block layout of the network it belongs to.

    The weights of a sum node are the softmax of its block, hence strictly
    positive and normalized for any finite logits.
    """

    logits: np.ndarray
    blocks: tuple[Block, ...]

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        need = max((b.stop for b in self.blocks), default=0)
        if self.logits.shape != (need,):
            raise ValueError(f"expected {need} logits, got shape {self.logits.shape}")

    def copy(self) -> ParamVector:
        return ParamVector(self.logits.copy(), self.blocks)

    def block_logits(self, block: int) -> np.ndarray:
        b = self.blocks[block]
        return self.logits[b.offset:b.stop]

    def weights(self, block: int) -> np.ndarray:
        return np.exp(self.log_weights(block))

    def log_weights(self, block: int) -> np.ndarray:
        z = self.block_logits(block)
        return z - _lse(z)

    def flat_log_weights(self) -> np.ndarray:
        """Log-softmax of every block, aligned with ``logits``."""
        out = np.empty_like(self.logits)
        for b in self.blocks:
            z = self.logits[b.offset:b.stop]
            out[b.offset:b.stop] = z - _lse(z)
        return out

    def trainable_mask(self) -> np.ndarray:
        mask = np.ones(self.logits.shape, dtype=bool)
        for b in self.blocks:
            if b.frozen:
                mask[b.offset:b.stop] = False
        return mask


def _lse(z: np.ndarray) -> float:
    m = z.max()
    return m + np.log(np.exp(z - m).sum())


def randomized(params: ParamVector, seed, scale: float = 0.1) -> ParamVector:
    """Copy of ``params`` with trainable logits drawn i.i.d. from U[-scale, scale].

    Frozen blocks keep their values.
    """
    rng = np.random.default_rng(seed)
    fresh = rng.uniform(-scale, scale, size=params.logits.shape)
    mask = params.trainable_mask()
    return ParamVector(np.where(mask, fresh, params.logits), params.blocks)
