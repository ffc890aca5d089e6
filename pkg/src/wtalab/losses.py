"""Cost vectors and assignment weights for multi-hypothesis regression losses.

A model proposes K trajectories per scene. Each variant in this module turns
the K per-hypothesis costs into a probability vector q over the heads, and the
training objective is sum_k q_k * cost_k with q treated as a constant during
backpropagation. The variants differ only in how q is built:

    wta   one-hot on the lowest-cost head
    rwta  winner gets 1 - epsilon, the rest share epsilon evenly
    ewta  uniform over the n lowest-cost heads
    dac   uniform over the winner's block in a contiguous partition
    awta  softmin of the costs at temperature T

A separate cross-entropy term trains the per-head confidence scores against
the hard winner and is shared by every variant.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigurationError, InputError

if TYPE_CHECKING:
    from .network import HypothesisSet

logger = logging.getLogger(__name__)

VARIANTS = ("wta", "rwta", "ewta", "dac", "awta")

SCORE_PROB_FLOOR = 1e-12


def stable_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with the max subtracted before exponentiation."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def max_dac_depth(n_heads: int) -> int:
    """Deepest partition level for K heads; blocks are singletons there."""
    if n_heads < 1:
        raise InputError(f"need at least one head, got {n_heads}")
    return int(n_heads - 1).bit_length()


@dataclasses.dataclass(frozen=True)
class AssignmentWeights:
    """Per-hypothesis weights over K heads.

    values: K nonnegative reals summing to 1 within 1e-9.
    variant: name of the kernel that produced them.
    stop_gradient: always True. The weights are constants during
        backpropagation; gradients flow only through the costs.
    """

    values: np.ndarray
    variant: str
    stop_gradient: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 1:
            raise InputError("weights must be a 1-d vector over K >= 1 heads")
        if not np.all(np.isfinite(values)):
            raise InputError("weights must be finite")
        if np.any(values < 0.0):
            raise InputError("weights must be nonnegative")
        if abs(float(values.sum()) - 1.0) > 1e-9:
            raise InputError("weights must sum to 1 within 1e-9")
        if not self.stop_gradient:
            raise InputError("assignment weights are gradient-stopped by contract")

    def __len__(self) -> int:
        return int(self.values.size)


@dataclasses.dataclass
class LossConfig:
    """Which weight variant to train with, plus its knobs.

    temperature, top_n and depth are the values used when the variant needs
    them; during scheduled training the harness overrides them per epoch.
    score_coef scales the confidence cross-entropy term.
    """

    variant: str = "awta"
    temperature: float = 1.0
    epsilon: float = 0.05
    top_n: int = 1
    depth: int = 0
    score_coef: float = 1.0

    def validate(self, n_heads: int | None = None) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown loss variant {self.variant!r}, expected one of {VARIANTS}"
            )
        if self.variant == "awta" and not self.temperature > 0.0:
            raise ConfigurationError("temperature must be positive")
        if self.score_coef < 0.0:
            raise ConfigurationError("score_coef must be nonnegative")
        if n_heads is not None:
            if self.variant == "rwta":
                _check_epsilon(self.epsilon, n_heads)
            if self.variant == "ewta" and not 1 <= self.top_n <= n_heads:
                raise ConfigurationError(
                    f"top_n must be in [1, {n_heads}], got {self.top_n}"
                )
            if self.variant == "dac" and not 0 <= self.depth <= max_dac_depth(n_heads):
                raise ConfigurationError(
                    f"depth must be in [0, {max_dac_depth(n_heads)}], got {self.depth}"
                )


def _check_costs(costs) -> np.ndarray:
    arr = np.asarray(costs, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise InputError("cost vector must be 1-d with K >= 1 entries")
    if not np.all(np.isfinite(arr)):
        raise InputError("cost vector must be finite")
    return arr


def _check_epsilon(epsilon: float, n_heads: int) -> None:
    if n_heads < 2:
        raise InputError("rwta needs at least two heads")
    hi = (n_heads - 1) / n_heads
    if not 0.0 < epsilon <= hi:
        raise InputError(
            f"epsilon must be in (0, {hi}] for K={n_heads}, got {epsilon}"
        )


def ade_cost(pred: np.ndarray, target: np.ndarray) -> float:
    """Average squared displacement between a trajectory and its target.

    Both arguments are (L, 2) waypoint arrays in the same frame. The cost is
    the mean over the L steps of the squared 2-norm of the residual.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise InputError(
            f"trajectory shapes differ: {pred.shape} vs {target.shape}"
        )
    if pred.ndim != 2 or pred.shape[1] != 2 or pred.shape[0] < 1:
        raise InputError(f"expected an (L, 2) trajectory, got shape {pred.shape}")
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def cost_vector(hypotheses: "HypothesisSet", target: np.ndarray) -> np.ndarray:
    """Per-head ade_cost of every hypothesis against one target trajectory."""
    return np.array(
        [ade_cost(traj, target) for traj in hypotheses.trajectories], dtype=float
    )


def winner_index(costs) -> int:
    """Index of the lowest-cost head. Ties resolve to the lowest index."""
    return int(np.argmin(_check_costs(costs)))


# ---------------------------------------------------------------------------
# Weight kernels. The private functions act on the last axis of an arbitrary
# batch of cost vectors; the public wrappers take one vector and return a
# validated AssignmentWeights.
# ---------------------------------------------------------------------------


def _wta_kernel(costs: np.ndarray) -> np.ndarray:
    weights = np.zeros_like(costs)
    winners = np.argmin(costs, axis=-1)
    np.put_along_axis(weights, winners[..., None], 1.0, axis=-1)
    return weights


def _rwta_kernel(costs: np.ndarray, epsilon: float) -> np.ndarray:
    n_heads = costs.shape[-1]
    _check_epsilon(epsilon, n_heads)
    weights = np.full_like(costs, epsilon / (n_heads - 1))
    winners = np.argmin(costs, axis=-1)
    np.put_along_axis(weights, winners[..., None], 1.0 - epsilon, axis=-1)
    return weights


def _ewta_kernel(costs: np.ndarray, top_n: int) -> np.ndarray:
    n_heads = costs.shape[-1]
    if not 1 <= top_n <= n_heads:
        raise InputError(f"top_n must be in [1, {n_heads}], got {top_n}")
    order = np.argsort(costs, axis=-1, kind="stable")
    weights = np.zeros_like(costs)
    np.put_along_axis(weights, order[..., :top_n], 1.0 / top_n, axis=-1)
    return weights


def dac_block_ids(n_heads: int, depth: int) -> np.ndarray:
    """Block id per head for a contiguous partition built by halving.

    Depth 0 is one block covering every head. Each level splits every block
    into a first half of ceil(size / 2) heads and a second half with the
    rest; singleton blocks stay as they are. At max_dac_depth(K) all blocks
    are singletons.
    """
    if not 0 <= depth <= max_dac_depth(n_heads):
        raise InputError(
            f"depth must be in [0, {max_dac_depth(n_heads)}] for K={n_heads},"
            f" got {depth}"
        )
    blocks = [(0, n_heads)]
    for _ in range(depth):
        split = []
        for lo, hi in blocks:
            size = hi - lo
            if size <= 1:
                split.append((lo, hi))
                continue
            mid = lo + (size + 1) // 2
            split.append((lo, mid))
            split.append((mid, hi))
        blocks = split
    ids = np.empty(n_heads, dtype=int)
    for block_id, (lo, hi) in enumerate(blocks):
        ids[lo:hi] = block_id
    return ids


def _dac_kernel(costs: np.ndarray, depth: int) -> np.ndarray:
    n_heads = costs.shape[-1]
    ids = dac_block_ids(n_heads, depth)
    block_sizes = np.bincount(ids)
    winners = np.argmin(costs, axis=-1)
    winner_blocks = ids[winners]
    member = (ids == winner_blocks[..., None]).astype(costs.dtype)
    return member / block_sizes[winner_blocks][..., None]


def _awta_kernel(costs: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0.0:
        raise InputError(f"temperature must be positive, got {temperature}")
    # Subtracting the row minimum keeps the largest exponent at exactly 0,
    # so the normalizer is always >= 1 and never overflows.
    shifted = costs - np.min(costs, axis=-1, keepdims=True)
    weights = np.exp(-shifted / temperature)
    return weights / np.sum(weights, axis=-1, keepdims=True)


def wta_weights(costs) -> AssignmentWeights:
    """One-hot weights on the lowest-cost head, ties to the lowest index."""
    return AssignmentWeights(_wta_kernel(_check_costs(costs)), "wta")


def rwta_weights(costs, epsilon: float = 0.05) -> AssignmentWeights:
    """Relaxed winner weights: 1 - epsilon on the winner, the rest uniform."""
    return AssignmentWeights(_rwta_kernel(_check_costs(costs), epsilon), "rwta")


def ewta_weights(costs, top_n: int) -> AssignmentWeights:
    """Uniform weights over the top_n lowest-cost heads."""
    return AssignmentWeights(_ewta_kernel(_check_costs(costs), top_n), "ewta")


def dac_weights(costs, depth: int) -> AssignmentWeights:
    """Uniform weights over the winner's block at the given partition depth."""
    return AssignmentWeights(_dac_kernel(_check_costs(costs), depth), "dac")


def awta_weights(costs, temperature: float) -> AssignmentWeights:
    """Softmin weights exp(-cost / T) normalized over heads."""
    return AssignmentWeights(_awta_kernel(_check_costs(costs), temperature), "awta")


def assignment_weights(costs, config: LossConfig) -> AssignmentWeights:
    """Dispatch to the kernel selected by config.variant."""
    arr = _check_costs(costs)
    return AssignmentWeights(_weights_kernel(arr, config), config.variant)


def _weights_kernel(costs: np.ndarray, config: LossConfig) -> np.ndarray:
    if config.variant == "wta":
        return _wta_kernel(costs)
    if config.variant == "rwta":
        return _rwta_kernel(costs, config.epsilon)
    if config.variant == "ewta":
        return _ewta_kernel(costs, config.top_n)
    if config.variant == "dac":
        return _dac_kernel(costs, config.depth)
    if config.variant == "awta":
        return _awta_kernel(costs, config.temperature)
    raise ConfigurationError(
        f"unknown loss variant {config.variant!r}, expected one of {VARIANTS}"
    )


def weighted_loss(costs, weights) -> float:
    """Dot product of the cost vector with gradient-stopped weights."""
    arr = _check_costs(costs)
    values = weights.values if isinstance(weights, AssignmentWeights) else weights
    values = np.asarray(values, dtype=float)
    if values.shape != arr.shape:
        raise InputError(
            f"weights length {values.shape} does not match costs {arr.shape}"
        )
    return float(arr @ values)


def score_loss(scores, winner: int) -> float:
    """Negative log confidence of the winning head.

    The winner is the hard argmin head regardless of the weight variant.
    A zero probability is clamped to SCORE_PROB_FLOOR before the log.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size < 1:
        raise InputError("scores must be a 1-d vector over K >= 1 heads")
    if not 0 <= winner < scores.size:
        raise InputError(f"winner index {winner} out of range for K={scores.size}")
    p = float(scores[winner])
    if p < SCORE_PROB_FLOOR:
        logger.warning(
            "winner probability %.3g clamped to %.0e before log", p, SCORE_PROB_FLOOR
        )
        p = SCORE_PROB_FLOOR
    return float(-np.log(p))


# ---------------------------------------------------------------------------
# Batched objective used by training and by the gradient checker.
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class BatchObjective:
    """Loss values and output-side gradients for one batch.

    loss is per sample: weighted trajectory cost plus the score term.
    d_trajectories and d_score_logits are the gradients of the batch MEAN
    loss with respect to the raw network outputs, ready for backward().
    """

    loss: np.ndarray
    d_trajectories: np.ndarray
    d_score_logits: np.ndarray
    costs: np.ndarray
    weights: np.ndarray
    winners: np.ndarray
    score_clamped: int = 0

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.loss))


def batch_objective(
    preds: np.ndarray,
    logits: np.ndarray,
    targets: np.ndarray,
    config: LossConfig,
) -> BatchObjective:
    """Evaluate the composite objective on a batch of model outputs.

    Args:
        preds: (B, K, L, 2) predicted trajectories.
        logits: (B, K) raw confidence logits.
        targets: (B, L, 2) ground-truth trajectories.
        config: loss variant with its per-epoch control values resolved.

    Returns:
        BatchObjective with per-sample losses and mean-loss gradients.
    """
    preds = np.asarray(preds, dtype=float)
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.ndim != 4 or preds.shape[-1] != 2:
        raise InputError(f"preds must be (B, K, L, 2), got {preds.shape}")
    batch, n_heads, horizon, _ = preds.shape
    if logits.shape != (batch, n_heads):
        raise InputError(f"logits must be {(batch, n_heads)}, got {logits.shape}")
    if targets.shape != (batch, horizon, 2):
        raise InputError(
            f"targets must be {(batch, horizon, 2)}, got {targets.shape}"
        )

    residual = preds - targets[:, None, :, :]
    costs = np.mean(np.sum(residual**2, axis=3), axis=2)
    weights = _weights_kernel(costs, config)
    winners = np.argmin(costs, axis=1)

    probs = stable_softmax(logits, axis=1)
    winner_probs = probs[np.arange(batch), winners]
    clamped = int(np.count_nonzero(winner_probs < SCORE_PROB_FLOOR))
    loss = np.sum(weights * costs, axis=1) + config.score_coef * -np.log(
        np.maximum(winner_probs, SCORE_PROB_FLOOR)
    )

    d_traj = weights[:, :, None, None] * (2.0 / horizon) * residual / batch
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(batch), winners] = 1.0
    d_logits = config.score_coef * (probs - one_hot) / batch

    return BatchObjective(
        loss=loss,
        d_trajectories=d_traj,
        d_score_logits=d_logits,
        costs=costs,
        weights=weights,
        winners=winners,
        score_clamped=clamped,
    )
