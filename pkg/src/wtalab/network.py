"""A small multi-hypothesis MLP with hand-written backpropagation.

The network maps a flat context vector through ReLU hidden layers to a single
wide output holding K trajectories of L steps plus one confidence logit per
head. Layout of the output vector: the first K*L*2 entries are the
trajectories in head-major order, the last K entries are the logits.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, NonFiniteError
from .losses import LossConfig, batch_objective, stable_softmax

CHECKPOINT_VERSION = 1

INIT_MODES = ("glorot", "clustered")


@dataclasses.dataclass(frozen=True)
class HypothesisSet:
    """K candidate trajectories with confidence scores for one scene.

    trajectories: (K, L, 2) waypoints.
    score_logits: (K,) raw confidence outputs.
    scores: (K,) softmax of the logits; positive, sums to 1 within 1e-9.
    """

    trajectories: np.ndarray
    score_logits: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=float)
        logits = np.asarray(self.score_logits, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "score_logits", logits)
        object.__setattr__(self, "scores", scores)
        if traj.ndim != 3 or traj.shape[2] != 2 or traj.shape[0] < 1:
            raise InputError(f"trajectories must be (K, L, 2), got {traj.shape}")
        n_heads = traj.shape[0]
        if logits.shape != (n_heads,) or scores.shape != (n_heads,):
            raise InputError("logits and scores must both have K entries")
        if not np.all(np.isfinite(traj)):
            raise InputError("trajectories must be finite")
        if not np.all(np.isfinite(scores)) or np.any(scores <= 0.0):
            raise InputError("scores must be finite and strictly positive")
        if abs(float(scores.sum()) - 1.0) > 1e-9:
            raise InputError("scores must sum to 1 within 1e-9")

    @property
    def n_heads(self) -> int:
        return int(self.trajectories.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.trajectories.shape[1])

    @classmethod
    def from_outputs(cls, trajectories: np.ndarray, logits: np.ndarray) -> "HypothesisSet":
        return cls(trajectories, logits, stable_softmax(np.asarray(logits, dtype=float)))


@dataclasses.dataclass
class ModelConfig:
    """Architecture description for init_params and checkpoints."""

    input_dim: int
    n_heads: int
    horizon: int
    hidden: tuple[int, ...] = (64, 64)
    init: str = "glorot"

    def validate(self) -> None:
        if self.input_dim < 0:
            raise ConfigurationError(f"input_dim must be >= 0, got {self.input_dim}")
        if self.n_heads < 1:
            raise ConfigurationError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.init not in INIT_MODES:
            raise ConfigurationError(
                f"unknown init mode {self.init!r}, expected one of {INIT_MODES}"
            )

    @property
    def output_dim(self) -> int:
        return self.n_heads * (self.horizon * 2 + 1)


@dataclasses.dataclass
class ModelParams:
    """Dense layer parameters. weights[i] has shape (fan_out, fan_in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_heads: int
    horizon: int

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(int(w.shape[0]) for w in self.weights[:-1])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            n_heads=self.n_heads,
            horizon=self.horizon,
        )


@dataclasses.dataclass
class GradientBuffer:
    """Gradients with the same shapes as ModelParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0) -> ModelParams:
    """Build parameters with uniform init in [-a, a], a = sqrt(6 / (fan_in + fan_out)).

    Biases use the same bound as their layer's weights, which leaves every
    head at a slightly different starting point. The "clustered" mode instead
    tiles one shared bias template across all K heads of the output layer, so
    every head starts from the same trajectory and logit; with a hard
    winner-takes-all loss the losing heads then never separate.
    """
    config.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [config.input_dim, *config.hidden, config.output_dim]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    if config.init == "clustered":
        bound = np.sqrt(6.0 / (dims[-2] + dims[-1]))
        traj_template = rng.uniform(-bound, bound, size=config.horizon * 2)
        logit_value = rng.uniform(-bound, bound)
        biases[-1] = np.concatenate(
            [np.tile(traj_template, config.n_heads), np.full(config.n_heads, logit_value)]
        )
    return ModelParams(
        weights=weights, biases=biases, n_heads=config.n_heads, horizon=config.horizon
    )


def _check_context_batch(params: ModelParams, contexts: np.ndarray) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=float)
    if contexts.ndim != 2 or contexts.shape[1] != params.input_dim:
        raise ConfigurationError(
            f"context batch must be (B, {params.input_dim}), got {contexts.shape}"
        )
    return contexts


def forward_batch(
    params: ModelParams, contexts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Run the network on (B, input_dim) contexts.

    Returns (trajectories (B, K, L, 2), logits (B, K), activations). The
    activations list holds the input and every hidden layer output and is
    consumed by backward_batch.
    """
    contexts = _check_context_batch(params, contexts)
    activations = [contexts]
    hidden = contexts
    for weight, bias in zip(params.weights[:-1], params.biases[:-1]):
        hidden = np.maximum(hidden @ weight.T + bias, 0.0)
        activations.append(hidden)
    out = hidden @ params.weights[-1].T + params.biases[-1]
    batch = out.shape[0]
    n_traj = params.n_heads * params.horizon * 2
    trajectories = out[:, :n_traj].reshape(batch, params.n_heads, params.horizon, 2)
    logits = out[:, n_traj:]
    return trajectories, logits, activations


def forward(params: ModelParams, context: np.ndarray) -> HypothesisSet:
    """Run the network on one context vector."""
    context = np.asarray(context, dtype=float)
    if context.ndim != 1:
        raise ConfigurationError(f"context must be 1-d, got shape {context.shape}")
    trajectories, logits, _ = forward_batch(params, context[None, :])
    return HypothesisSet.from_outputs(trajectories[0], logits[0])


def backward_batch(
    params: ModelParams,
    activations: list[np.ndarray],
    d_trajectories: np.ndarray,
    d_score_logits: np.ndarray,
) -> GradientBuffer:
    """Backpropagate output gradients through the cached activations."""
    batch = d_trajectories.shape[0]
    d_out = np.concatenate(
        [d_trajectories.reshape(batch, -1), d_score_logits], axis=1
    )
    if d_out.shape[1] != params.weights[-1].shape[0]:
        raise ConfigurationError(
            f"upstream gradient width {d_out.shape[1]} does not match the"
            f" output layer width {params.weights[-1].shape[0]}"
        )
    grad_w: list[np.ndarray] = [np.empty(0)] * params.n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * params.n_layers
    delta = d_out
    for layer in reversed(range(params.n_layers)):
        grad_w[layer] = delta.T @ activations[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (activations[layer] > 0.0)
    return GradientBuffer(weights=grad_w, biases=grad_b)


def backward(
    params: ModelParams,
    context: np.ndarray,
    d_trajectories: np.ndarray,
    d_score_logits: np.ndarray,
) -> GradientBuffer:
    """Gradients of a scalar loss for one context, given the loss gradient
    with respect to the trajectories and the score logits."""
    context = np.asarray(context, dtype=float)
    if context.ndim != 1:
        raise ConfigurationError(f"context must be 1-d, got shape {context.shape}")
    d_traj = np.asarray(d_trajectories, dtype=float)
    d_logits = np.asarray(d_score_logits, dtype=float)
    expected = (params.n_heads, params.horizon, 2)
    if d_traj.shape != expected:
        raise ConfigurationError(
            f"d_trajectories must be {expected}, got {d_traj.shape}"
        )
    if d_logits.shape != (params.n_heads,):
        raise ConfigurationError(
            f"d_score_logits must be ({params.n_heads},), got {d_logits.shape}"
        )
    _, _, activations = forward_batch(params, context[None, :])
    return backward_batch(params, activations, d_traj[None], d_logits[None])


# ---------------------------------------------------------------------------
# Adam optimizer.
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    step: int
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(
        step=0,
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(
    params: ModelParams,
    grads: GradientBuffer,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place.

    Rejects the step with NonFiniteError if any gradient entry is NaN or
    infinite, naming the offending tensor; parameters are left untouched.
    """
    for kind, tensors in (("weights", grads.weights), ("biases", grads.biases)):
        for layer, grad in enumerate(tensors):
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(
                    f"non-finite gradient in layer {layer} {kind}; step rejected"
                )
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    groups = (
        (params.weights, grads.weights, state.m_weights, state.v_weights),
        (params.biases, grads.biases, state.m_biases, state.v_biases),
    )
    for tensors, grad_tensors, m_tensors, v_tensors in groups:
        for tensor, grad, m, v in zip(tensors, grad_tensors, m_tensors, v_tensors):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad**2
            tensor -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
            if not np.all(np.isfinite(tensor)):
                raise NonFiniteError("parameters became non-finite after the update")
    return params, state


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class GradientCheckResult:
    max_rel_error: float
    n_checked: int
    tie_case: bool


def gradient_check(
    params: ModelParams,
    context: np.ndarray,
    target: np.ndarray,
    config: LossConfig,
    step: float = 1e-5,
) -> GradientCheckResult:
    """Compare analytic gradients of the composite loss against central
    finite differences.

    The assignment weights and the score-loss winner are held fixed at their
    values from the unperturbed parameters, matching the stop-gradient
    contract of the training objective. If several heads tie for the lowest
    cost the result is flagged and the output-layer coordinates of the tied
    heads are excluded from the check.
    """
    context = np.asarray(context, dtype=float)
    target = np.asarray(target, dtype=float)
    preds, logits, activations = forward_batch(params, context[None, :])
    objective = batch_objective(preds, logits, target[None], config)
    analytic = backward_batch(
        params, activations, objective.d_trajectories, objective.d_score_logits
    )

    frozen_weights = objective.weights[0]
    frozen_winner = int(objective.winners[0])
    costs = objective.costs[0]
    tied = costs <= costs.min() + 1e-12
    tie_case = int(tied.sum()) > 1

    def frozen_loss() -> float:
        p, lg, _ = forward_batch(params, context[None, :])
        residual = p[0] - target
        head_costs = np.mean(np.sum(residual**2, axis=2), axis=1)
        probs = stable_softmax(lg[0])
        score = -np.log(max(float(probs[frozen_winner]), 1e-300))
        return float(frozen_weights @ head_costs + config.score_coef * score)

    horizon2 = params.horizon * 2
    skipped_rows: set[int] = set()
    if tie_case:
        for head in np.flatnonzero(tied):
            skipped_rows.update(range(head * horizon2, (head + 1) * horizon2))
            skipped_rows.add(params.n_heads * horizon2 + head)

    max_err = 0.0
    n_checked = 0
    last = params.n_layers - 1
    for layer in range(params.n_layers):
        for tensor, grad in (
            (params.weights[layer], analytic.weights[layer]),
            (params.biases[layer], analytic.biases[layer]),
        ):
            flat = tensor.reshape(-1)
            grad_flat = grad.reshape(-1)
            n_cols = tensor.shape[1] if tensor.ndim == 2 else 1
            for i in range(flat.size):
                if layer == last and (i // n_cols) in skipped_rows:
                    continue
                original = flat[i]
                flat[i] = original + step
                loss_plus = frozen_loss()
                flat[i] = original - step
                loss_minus = frozen_loss()
                flat[i] = original
                numeric = (loss_plus - loss_minus) / (2.0 * step)
                scale = max(abs(grad_flat[i]), abs(numeric), 1e-6)
                max_err = max(max_err, abs(grad_flat[i] - numeric) / scale)
                n_checked += 1
    return GradientCheckResult(max_rel_error=max_err, n_checked=n_checked, tie_case=tie_case)


# ---------------------------------------------------------------------------
# Checkpoints.
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write parameters as versioned JSON with shapes and exact float values."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model": "multihead-mlp",
        "input_dim": params.input_dim,
        "n_heads": params.n_heads,
        "horizon": params.horizon,
        "hidden": list(params.hidden),
        "weights": [
            {"shape": list(w.shape), "data": w.reshape(-1).tolist()}
            for w in params.weights
        ],
        "biases": [
            {"shape": list(b.shape), "data": b.reshape(-1).tolist()}
            for b in params.biases
        ],
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint written by save_checkpoint."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint {path} has format_version {version!r},"
            f" expected {CHECKPOINT_VERSION}"
        )
    try:
        weights = [
            np.array(entry["data"], dtype=float).reshape(entry["shape"])
            for entry in payload["weights"]
        ]
        biases = [
            np.array(entry["data"], dtype=float).reshape(entry["shape"])
            for entry in payload["biases"]
        ]
        params = ModelParams(
            weights=weights,
            biases=biases,
            n_heads=int(payload["n_heads"]),
            horizon=int(payload["horizon"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"checkpoint {path} is malformed: {exc}") from exc
    expected_out = params.n_heads * (params.horizon * 2 + 1)
    if params.weights[-1].shape[0] != expected_out:
        raise ConfigurationError(
            f"checkpoint {path} output width {params.weights[-1].shape[0]}"
            f" does not match K*(2L+1) = {expected_out}"
        )
    for first, second in zip(params.weights[:-1], params.weights[1:]):
        if second.shape[1] != first.shape[0]:
            raise ConfigurationError(f"checkpoint {path} has mismatched layer shapes")
    return params
