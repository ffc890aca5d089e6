"""Synthetic branching-trajectory scenes.

Every scene has a straight constant-speed past segment ending at the origin
and a future drawn from a small set of branches (straight or turning arcs).
The branch is sampled independently of the past, so the future is genuinely
multimodal given the context: no model can do better than covering the
branches with separate hypotheses.

Randomness is derived per scene from (seed, scene index), so generating a
range of scenes in parallel chunks gives bitwise the same data as one serial
pass.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DatasetParseError, InputError


@dataclasses.dataclass(frozen=True)
class Scene:
    """One training example: an observed past and one realized future."""

    scene_id: str
    past: np.ndarray
    future: np.ndarray
    mode_label: int

    def __post_init__(self):
        past = np.asarray(self.past, dtype=float)
        future = np.asarray(self.future, dtype=float)
        object.__setattr__(self, "past", past)
        object.__setattr__(self, "future", future)
        if past.ndim != 2 or past.shape[1] != 2 or past.shape[0] < 1:
            raise InputError(f"past must be (P, 2) with P >= 1, got {past.shape}")
        if future.ndim != 2 or future.shape[1] != 2 or future.shape[0] < 1:
            raise InputError(f"future must be (L, 2) with L >= 1, got {future.shape}")
        if not (np.all(np.isfinite(past)) and np.all(np.isfinite(future))):
            raise InputError("scene coordinates must be finite")


@dataclasses.dataclass
class GeneratorConfig:
    """Branch geometry and sampling parameters.

    turns holds the total heading change of each branch over the future,
    in radians; 0 is straight, positive turns left. probabilities are the
    branch sampling weights. noise_std is the standard deviation of the
    i.i.d. Gaussian waypoint noise added to both past and future.
    """

    n_branches: int = 3
    probabilities: tuple[float, ...] = (0.4, 0.4, 0.2)
    turns: tuple[float, ...] = (math.pi / 2, 0.0, -math.pi / 2)
    speed: float = 1.0
    noise_std: float = 0.1
    past_len: int = 20
    future_len: int = 30
    seed: int = 0

    def validate(self) -> None:
        if self.n_branches < 1:
            raise ConfigurationError(f"n_branches must be >= 1, got {self.n_branches}")
        if len(self.probabilities) != self.n_branches:
            raise ConfigurationError(
                f"expected {self.n_branches} probabilities, got {len(self.probabilities)}"
            )
        if any(p < 0 for p in self.probabilities):
            raise ConfigurationError("branch probabilities must be nonnegative")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ConfigurationError("branch probabilities must sum to 1 within 1e-9")
        if len(self.turns) != self.n_branches:
            raise ConfigurationError(
                f"expected {self.n_branches} turns, got {len(self.turns)}"
            )
        if not self.speed > 0:
            raise ConfigurationError(f"speed must be positive, got {self.speed}")
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.past_len < 1 or self.future_len < 1:
            raise ConfigurationError("past_len and future_len must be >= 1")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")


def branch_waypoints(config: GeneratorConfig, branch: int) -> np.ndarray:
    """Noise-free future for one branch, starting from the origin."""
    heading_step = config.turns[branch] / config.future_len
    steps = np.arange(1, config.future_len + 1)
    headings = steps * heading_step
    deltas = config.speed * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    return np.cumsum(deltas, axis=0)


def generate_scene(config: GeneratorConfig, index: int) -> Scene:
    """Build scene `index` of the stream defined by config.seed."""
    if index < 0:
        raise InputError(f"scene index must be >= 0, got {index}")
    rng = np.random.default_rng([config.seed, index])
    branch = int(rng.choice(config.n_branches, p=np.asarray(config.probabilities)))
    past_x = (np.arange(config.past_len) - (config.past_len - 1)) * config.speed
    past = np.stack([past_x, np.zeros(config.past_len)], axis=1)
    future = branch_waypoints(config, branch)
    past = past + rng.normal(0.0, config.noise_std, size=past.shape)
    future = future + rng.normal(0.0, config.noise_std, size=future.shape)
    return Scene(
        scene_id=f"scene-{config.seed}-{index:06d}",
        past=past,
        future=future,
        mode_label=branch,
    )


def generate(config: GeneratorConfig, count: int, start_index: int = 0) -> list[Scene]:
    """Generate `count` consecutive scenes starting at start_index."""
    config.validate()
    if count < 0:
        raise InputError(f"count must be >= 0, got {count}")
    return [generate_scene(config, start_index + i) for i in range(count)]


# ---------------------------------------------------------------------------
# Line-delimited dataset files.
# ---------------------------------------------------------------------------


def save_dataset(scenes: list[Scene], path: str | Path) -> None:
    """Write one JSON record per line; floats round-trip exactly."""
    with open(path, "w") as handle:
        for scene in scenes:
            record = {
                "scene_id": scene.scene_id,
                "past": scene.past.tolist(),
                "future": scene.future.tolist(),
                "mode_label": scene.mode_label,
            }
            handle.write(json.dumps(record) + "\n")


def _parse_waypoints(raw, key: str, line_number: int) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise DatasetParseError(line_number, f"{key} must be a non-empty list")
    for point in raw:
        if (
            not isinstance(point, list)
            or len(point) != 2
            or not all(isinstance(v, (int, float)) for v in point)
        ):
            raise DatasetParseError(line_number, f"{key} must be a list of [x, y] pairs")
    return np.asarray(raw, dtype=float)


def load_dataset(path: str | Path) -> list[Scene]:
    """Read a dataset written by save_dataset.

    Raises DatasetParseError naming the 1-based line number of the first
    malformed record. An empty file loads as an empty list.
    """
    scenes = []
    with open(path) as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(line_number, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetParseError(line_number, "record must be a JSON object")
            missing = {"scene_id", "past", "future", "mode_label"} - record.keys()
            if missing:
                raise DatasetParseError(
                    line_number, f"missing keys: {sorted(missing)}"
                )
            if not isinstance(record["mode_label"], int):
                raise DatasetParseError(line_number, "mode_label must be an integer")
            try:
                scenes.append(
                    Scene(
                        scene_id=str(record["scene_id"]),
                        past=_parse_waypoints(record["past"], "past", line_number),
                        future=_parse_waypoints(record["future"], "future", line_number),
                        mode_label=record["mode_label"],
                    )
                )
            except InputError as exc:
                raise DatasetParseError(line_number, str(exc)) from exc
    return scenes


# ---------------------------------------------------------------------------
# Model-facing features.
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FeaturizedScene:
    """A scene translated into the model frame.

    features: flattened past waypoints after moving the last past point to
        the origin.
    target: the future translated by the same offset.
    offset: the translation to add back for de-normalization.
    """

    scene_id: str
    features: np.ndarray
    target: np.ndarray
    offset: np.ndarray
    mode_label: int


def featurize(scene: Scene) -> FeaturizedScene:
    """Translate a scene so the last past point is the origin and flatten."""
    offset = scene.past[-1].copy()
    return FeaturizedScene(
        scene_id=scene.scene_id,
        features=(scene.past - offset).reshape(-1),
        target=scene.future - offset,
        offset=offset,
        mode_label=scene.mode_label,
    )


def denormalize_prediction(trajectory: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Move a model-frame trajectory back into the scene frame."""
    trajectory = np.asarray(trajectory, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (2,):
        raise InputError(f"offset must have shape (2,), got {offset.shape}")
    return trajectory + offset


# ---------------------------------------------------------------------------
# Canonical task presets.
# ---------------------------------------------------------------------------


def three_branch_config(
    noise_std: float = 0.1, seed: int = 0, past_len: int = 20, future_len: int = 30
) -> GeneratorConfig:
    """The default benchmark: straight, left-turn and right-turn branches."""
    return GeneratorConfig(
        n_branches=3,
        probabilities=(0.4, 0.4, 0.2),
        turns=(math.pi / 2, 0.0, -math.pi / 2),
        speed=1.0,
        noise_std=noise_std,
        past_len=past_len,
        future_len=future_len,
        seed=seed,
    )


def endpoint_ring_config(
    n_modes: int,
    radius: float,
    noise_std: float = 0.15,
    seed: int = 0,
    probabilities: tuple[float, ...] | None = None,
) -> GeneratorConfig:
    """Single-step futures on a ring of equally spaced endpoint modes.

    With a one-point past the features are identically zero, so the model
    reduces to K learnable constant endpoints: a pure quantization task.
    """
    if probabilities is None:
        probabilities = tuple([1.0 / n_modes] * n_modes)
    turns = tuple(2.0 * math.pi * m / n_modes for m in range(n_modes))
    return GeneratorConfig(
        n_branches=n_modes,
        probabilities=probabilities,
        turns=turns,
        speed=radius,
        noise_std=noise_std,
        past_len=1,
        future_len=1,
        seed=seed,
    )
