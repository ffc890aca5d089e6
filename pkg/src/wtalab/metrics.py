"""Distance metrics for multi-hypothesis trajectory forecasts.

All distances are plain (unsquared) Euclidean norms in meters, unlike the
squared per-step costs used for training. Aggregates over a dataset are
summed with math.fsum so the results do not depend on accumulation order.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import Scene, featurize
from .errors import ConfigurationError, InputError
from .network import HypothesisSet, ModelParams, forward_batch, stable_softmax

MISS_THRESHOLD = 2.0

EFFECTIVE_TAU = 0.01

REPORT_COLUMNS = (
    "n_scenes",
    "min_ade",
    "min_fde",
    "miss_rate",
    "brier_fde",
    "effective_hypotheses",
    "winner_histogram",
)


def _check_pair(hypotheses: HypothesisSet, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape != (hypotheses.horizon, 2):
        raise InputError(
            f"target must be ({hypotheses.horizon}, 2), got {target.shape}"
        )
    return target


def min_ade(hypotheses: HypothesisSet, target: np.ndarray) -> float:
    """Lowest average displacement error over the K hypotheses.

    Args:
        hypotheses: K candidate trajectories.
        target: (L, 2) ground-truth trajectory in the same frame.

    Returns:
        min over heads of the mean per-step Euclidean distance.
    """
    target = _check_pair(hypotheses, target)
    dists = np.linalg.norm(hypotheses.trajectories - target, axis=2)
    return float(np.min(np.mean(dists, axis=1)))


def min_fde(hypotheses: HypothesisSet, target: np.ndarray) -> tuple[float, int]:
    """Lowest final displacement error and the head achieving it.

    Ties resolve to the lowest head index.

    Returns:
        (distance between the winning endpoint and the target endpoint,
         winning head index)
    """
    target = _check_pair(hypotheses, target)
    endpoint_dists = np.linalg.norm(hypotheses.trajectories[:, -1] - target[-1], axis=1)
    winner = int(np.argmin(endpoint_dists))
    return float(endpoint_dists[winner]), winner


def miss_rate(final_errors: Sequence[float], threshold: float = MISS_THRESHOLD) -> float:
    """Fraction of scenes whose best final error strictly exceeds threshold."""
    errors = np.asarray(final_errors, dtype=float)
    if errors.ndim != 1 or errors.size < 1:
        raise InputError("final_errors must be a non-empty 1-d sequence")
    return float(np.count_nonzero(errors > threshold)) / errors.size


def brier_fde(hypotheses: HypothesisSet, target: np.ndarray) -> float:
    """minFDE plus the squared confidence shortfall of the winning head.

    With delta the score of the head that achieves minFDE, the value is
    minFDE + (1 - delta)^2, penalizing models that put low confidence on
    their best hypothesis.
    """
    value, winner = min_fde(hypotheses, target)
    delta = float(hypotheses.scores[winner])
    return value + (1.0 - delta) ** 2


def effective_hypotheses(
    histogram: Sequence[int], tau: float = EFFECTIVE_TAU
) -> int:
    """Number of heads that win at least a tau fraction of scenes.

    Args:
        histogram: per-head counts of minFDE wins over a dataset.
        tau: minimum win fraction for a head to count, inclusive.
    """
    counts = np.asarray(histogram, dtype=float)
    if counts.ndim != 1 or counts.size < 1:
        raise InputError("histogram must be a non-empty 1-d sequence")
    if np.any(counts < 0):
        raise InputError("histogram counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise InputError("histogram must contain at least one win")
    return int(np.count_nonzero(counts / total >= tau))


@dataclasses.dataclass
class MetricsReport:
    """Dataset-level evaluation summary."""

    n_scenes: int
    min_ade: float
    min_fde: float
    miss_rate: float
    brier_fde: float
    effective_hypotheses: int
    winner_histogram: list[int]

    def to_csv(self) -> str:
        row = [
            str(self.n_scenes),
            repr(self.min_ade),
            repr(self.min_fde),
            repr(self.miss_rate),
            repr(self.brier_fde),
            str(self.effective_hypotheses),
            ";".join(str(c) for c in self.winner_histogram),
        ]
        return ",".join(REPORT_COLUMNS) + "\n" + ",".join(row) + "\n"


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(report.to_csv())


def read_report_csv(path: str | Path) -> MetricsReport:
    lines = Path(path).read_text().splitlines()
    if len(lines) != 2 or lines[0] != ",".join(REPORT_COLUMNS):
        raise InputError(f"{path} is not a metrics report CSV")
    values = lines[1].split(",")
    return MetricsReport(
        n_scenes=int(values[0]),
        min_ade=float(values[1]),
        min_fde=float(values[2]),
        miss_rate=float(values[3]),
        brier_fde=float(values[4]),
        effective_hypotheses=int(values[5]),
        winner_histogram=[int(c) for c in values[6].split(";")],
    )


def _order_by_score(scores: np.ndarray) -> np.ndarray:
    # Stable sort on the negated scores keeps ties in index order.
    return np.argsort(-scores, kind="stable")


def truncate_top_k(hypotheses: HypothesisSet, top_k: int) -> HypothesisSet:
    """Keep the top_k highest-score hypotheses, in descending score order.

    Scores are renormalized over the kept subset, which equals a softmax
    over the kept logits.
    """
    if not 1 <= top_k <= hypotheses.n_heads:
        raise InputError(
            f"top_k must be in [1, {hypotheses.n_heads}], got {top_k}"
        )
    keep = _order_by_score(hypotheses.scores)[:top_k]
    return HypothesisSet.from_outputs(
        hypotheses.trajectories[keep], hypotheses.score_logits[keep]
    )


def evaluate(
    params: ModelParams,
    scenes: Sequence[Scene],
    top_k: int | None = None,
    select: Callable[[HypothesisSet], HypothesisSet] | None = None,
    miss_threshold: float = MISS_THRESHOLD,
    tau: float = EFFECTIVE_TAU,
) -> MetricsReport:
    """Run the model over a dataset and aggregate the metrics.

    Each scene is featurized, predicted, optionally passed through `select`
    (for example a non-maximum suppression stage) and optionally truncated
    to the top_k highest-score hypotheses before scoring. The histogram
    counts minFDE winners by their position in the evaluated hypothesis set.
    """
    if len(scenes) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    feats = [featurize(scene) for scene in scenes]
    features = np.stack([f.features for f in feats])
    targets = np.stack([f.target for f in feats])
    if targets.shape[1] != params.horizon:
        raise ConfigurationError(
            f"dataset horizon {targets.shape[1]} does not match model horizon"
            f" {params.horizon}"
        )
    trajectories, logits, _ = forward_batch(params, features)
    scores = stable_softmax(logits, axis=1)

    if select is not None or top_k is not None:
        kept_traj = []
        kept_scores = []
        for i in range(len(scenes)):
            hyps = HypothesisSet(trajectories[i], logits[i], scores[i])
            if select is not None:
                hyps = select(hyps)
            if top_k is not None:
                hyps = truncate_top_k(hyps, top_k)
            kept_traj.append(hyps.trajectories)
            kept_scores.append(hyps.scores)
        sizes = {t.shape[0] for t in kept_traj}
        if len(sizes) != 1:
            raise InputError(
                f"post-selection hypothesis counts differ across scenes: {sorted(sizes)}"
            )
        trajectories = np.stack(kept_traj)
        scores = np.stack(kept_scores)

    n_scenes, n_eval = trajectories.shape[0], trajectories.shape[1]
    dists = np.linalg.norm(trajectories - targets[:, None, :, :], axis=3)
    ade = np.mean(dists, axis=2)
    fde = dists[:, :, -1]
    scene_min_ade = np.min(ade, axis=1)
    winners = np.argmin(fde, axis=1)
    rows = np.arange(n_scenes)
    scene_min_fde = fde[rows, winners]
    scene_brier = scene_min_fde + (1.0 - scores[rows, winners]) ** 2
    histogram = np.bincount(winners, minlength=n_eval).tolist()

    return MetricsReport(
        n_scenes=n_scenes,
        min_ade=math.fsum(scene_min_ade) / n_scenes,
        min_fde=math.fsum(scene_min_fde) / n_scenes,
        miss_rate=miss_rate(scene_min_fde, miss_threshold),
        brier_fde=math.fsum(scene_brier) / n_scenes,
        effective_hypotheses=effective_hypotheses(histogram, tau),
        winner_histogram=histogram,
    )
