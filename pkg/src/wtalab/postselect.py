"""Greedy non-maximum suppression over hypothesis endpoints.

Used to thin an over-complete hypothesis set (train with many heads, keep a
few diverse ones) before computing metrics.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigurationError, InputError
from .network import HypothesisSet

ORDER_RULES = ("score",)


@dataclasses.dataclass
class NMSConfig:
    """Selection count, suppression radius in meters, and ordering rule."""

    k_out: int
    radius: float = 2.0
    order: str = "score"

    def validate(self) -> None:
        if self.k_out < 1:
            raise ConfigurationError(f"k_out must be >= 1, got {self.k_out}")
        if self.radius < 0:
            raise ConfigurationError(f"radius must be >= 0, got {self.radius}")
        if self.order not in ORDER_RULES:
            raise ConfigurationError(
                f"unknown order rule {self.order!r}, expected one of {ORDER_RULES}"
            )


def nms_select(hypotheses: HypothesisSet, config: NMSConfig) -> HypothesisSet:
    """Pick up to k_out hypotheses with mutually distant endpoints.

    Candidates are visited in descending score order (ties by lowest index)
    and accepted when their endpoint lies at distance >= radius from every
    endpoint accepted so far. If fewer than k_out survive, the highest-score
    suppressed candidates fill the remaining slots. Scores of the selected
    set are renormalized to sum to 1, which equals a softmax over the
    selected logits.

    With radius 0 nothing is ever suppressed and the result is simply the
    k_out highest-score hypotheses in score order.
    """
    config.validate()
    if config.k_out > hypotheses.n_heads:
        raise InputError(
            f"k_out={config.k_out} exceeds the {hypotheses.n_heads} available"
            " hypotheses"
        )
    endpoints = hypotheses.trajectories[:, -1, :]
    order = np.argsort(-hypotheses.scores, kind="stable")
    accepted: list[int] = []
    suppressed: list[int] = []
    for candidate in order:
        if len(accepted) == config.k_out:
            break
        dists = [
            float(np.linalg.norm(endpoints[candidate] - endpoints[kept]))
            for kept in accepted
        ]
        if all(d >= config.radius for d in dists):
            accepted.append(int(candidate))
        else:
            suppressed.append(int(candidate))
    for candidate in suppressed:
        if len(accepted) == config.k_out:
            break
        accepted.append(candidate)
    keep = np.asarray(accepted, dtype=int)
    return HypothesisSet.from_outputs(
        hypotheses.trajectories[keep], hypotheses.score_logits[keep]
    )
