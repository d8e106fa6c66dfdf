"""Self-training metric learning for the single-link distance and threshold.

Each outer iteration mines, for every labeled text cluster, its closest
cannot-link pair (cluster member vs. any other candidate of the same image)
and its closest must-link pair (across the cluster's two direct subclusters).
The logistic loss over those pairs is then minimized with L-BFGS. The
parameter vector is ``theta = (-threshold, w)`` acting on ``(1, x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .descriptors import CharacterCandidate
from .linking import N_FEATURES, MetricParams, pair_feature_matrix, single_link

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class ClusterImage:
    """Candidates of one image with their ground-truth text clusters.

    ``features`` is the all-pairs tensor (n, n, 7); ``clusters`` lists member
    indices. Candidates outside every cluster still count as cannot-link
    partners.
    """

    features: np.ndarray
    clusters: list[list[int]]

    @classmethod
    def from_candidates(cls, cands: Sequence[CharacterCandidate], clusters) -> "ClusterImage":
        return cls(pair_feature_matrix(cands), [sorted(int(i) for i in c) for c in clusters])

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class LabeledClusterSet:
    images: list[ClusterImage]

    def __len__(self):
        return len(self.images)

    @property
    def n_clusters(self) -> int:
        return sum(len(im.clusters) for im in self.images)


@dataclass
class MinedPairs:
    cannot_link: np.ndarray
    must_link: np.ndarray
    cannot_index: list[tuple[int, int, int]] = field(default_factory=list)
    must_index: list[tuple[int, int, int]] = field(default_factory=list)

    def key(self):
        return tuple(self.cannot_index), tuple(self.must_index)


def _closest(dist: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> tuple[int, int]:
    sub = dist[np.ix_(rows, cols)]
    r, c = np.unravel_index(int(np.argmin(sub)), sub.shape)
    return rows[r], cols[c]


def mine_pairs(data: LabeledClusterSet, theta) -> MinedPairs:
    """Closest cannot-link and must-link pair per cluster under the current weights.

    Ties resolve to the lowest (member, partner) index pair. Subclusters are
    the two sides of the final merge when single-link clusters the members
    under the current weights.
    """
    w = np.asarray(theta, dtype=np.float64)[1:]
    cannot, must = [], []
    cannot_idx, must_idx = [], []
    for k, image in enumerate(data.images):
        dist = image.features @ w
        for cluster in image.clusters:
            if len(cluster) < 2:
                log.warning("skipping cluster with fewer than two members in image %d", k)
                continue
            inside = set(cluster)
            outside = [i for i in range(image.n) if i not in inside]
            if outside:
                u, v = _closest(dist, cluster, outside)
                cannot.append(image.features[u, v])
                cannot_idx.append((k, u, v))
            sub = dist[np.ix_(cluster, cluster)]
            _, merges = single_link(sub, np.inf)
            final = merges[-1]
            left = [cluster[i] for i in final.left]
            right = [cluster[i] for i in final.right]
            u, v = _closest(dist, left, right)
            must.append(image.features[u, v])
            must_idx.append((k, u, v))
    return MinedPairs(
        cannot_link=np.array(cannot, dtype=np.float64).reshape(-1, N_FEATURES),
        must_link=np.array(must, dtype=np.float64).reshape(-1, N_FEATURES),
        cannot_index=cannot_idx,
        must_index=must_idx,
    )


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def objective(theta, pairs: MinedPairs) -> float:
    """Logistic loss: cannot-link pairs are positives, must-link pairs negatives.

    Each set is averaged over its own size, which equals the usual ``1/2m``
    weighting when both sets hold ``m`` pairs.
    """
    return objective_and_gradient(theta, pairs)[0]


def objective_gradient(theta, pairs: MinedPairs) -> np.ndarray:
    return objective_and_gradient(theta, pairs)[1]


def objective_and_gradient(theta, pairs: MinedPairs) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    nc, nm = len(pairs.cannot_link), len(pairs.must_link)
    if nc + nm == 0:
        raise ValueError("no mined pairs")
    value = 0.0
    grad = np.zeros_like(theta)
    if nc:
        xc = _augment(pairs.cannot_link)
        zc = xc @ theta
        value += np.logaddexp(0.0, -zc).sum() / (2 * nc)
        grad += ((expit(zc) - 1.0) @ xc) / (2 * nc)
    if nm:
        xm = _augment(pairs.must_link)
        zm = xm @ theta
        value += np.logaddexp(0.0, zm).sum() / (2 * nm)
        grad += (expit(zm) @ xm) / (2 * nm)
    return float(value), grad


def minimize_objective(theta, pairs: MinedPairs, max_iter: int = 200) -> np.ndarray:
    """L-BFGS descent on the fixed pair sets; never returns a worse point."""
    theta = np.asarray(theta, dtype=np.float64)
    start = objective(theta, pairs)
    res = optimize.minimize(objective_and_gradient, theta, args=(pairs,), jac=True,
                            method="L-BFGS-B", options={"maxiter": max_iter})
    if np.all(np.isfinite(res.x)) and np.isfinite(res.fun) and res.fun <= start:
        return res.x
    return theta


def pair_error(theta, pairs: MinedPairs) -> float:
    """Fraction of pairs on the wrong side of the threshold."""
    theta = np.asarray(theta, dtype=np.float64)
    wrong = 0
    total = len(pairs.cannot_link) + len(pairs.must_link)
    if total == 0:
        return 0.0
    if len(pairs.cannot_link):
        wrong += int(np.sum(_augment(pairs.cannot_link) @ theta <= 0))
    if len(pairs.must_link):
        wrong += int(np.sum(_augment(pairs.must_link) @ theta > 0))
    return wrong / total


@dataclass
class IterationRecord:
    iteration: int
    objective_after_mining: float
    objective_after_update: float
    validation_error: float
    n_cannot: int
    n_must: int


@dataclass
class FitReport:
    restarts: list[list[IterationRecord]] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    best_restart: int = -1
    best_validation_error: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = []
        for r, hist in enumerate(self.restarts):
            tag = " (selected)" if r == self.best_restart else ""
            conv = "converged" if self.converged[r] else "not converged"
            lines.append(f"restart {r}: {conv}{tag}")
            for rec in hist:
                lines.append(f"  iter {rec.iteration:2d}  J(stage1)={rec.objective_after_mining:.6f}  "
                             f"J(stage2)={rec.objective_after_update:.6f}  "
                             f"val_err={rec.validation_error:.4f}  |C|={rec.n_cannot} |M|={rec.n_must}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def split_images(data: LabeledClusterSet, val_fraction: float, rng) -> tuple[LabeledClusterSet, LabeledClusterSet]:
    n = len(data.images)
    if n < 2 or val_fraction <= 0:
        return data, data
    order = rng.permutation(n)
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    val = [data.images[i] for i in sorted(order[:n_val])]
    train = [data.images[i] for i in sorted(order[n_val:])]
    return LabeledClusterSet(train), LabeledClusterSet(val)


def random_theta(rng) -> np.ndarray:
    w = rng.uniform(0.0, 1.0, N_FEATURES)
    eps = rng.uniform(0.0, 5.0)
    return np.concatenate([[-eps], w])


class SelfTrainingMetricLearner:
    """Alternate pair mining and logistic-loss minimization over several restarts.

    The loop need not converge, so every iterate (including the random
    start) is scored by its pair error on the held-out images, and the best
    one over all restarts is returned.
    """

    def __init__(self, max_iters: int = 20, restarts: int = 5, seed: int = 0,
                 val_fraction: float = 0.3, inner_max_iter: int = 200):
        self.max_iters = max_iters
        self.restarts = restarts
        self.seed = seed
        self.val_fraction = val_fraction
        self.inner_max_iter = inner_max_iter
        self.report_ = FitReport()

    def _run(self, train, val, theta):
        """One restart. Returns the iterate with the lowest validation error
        (earliest on ties), its error, the history and the convergence flag."""
        history = []
        prev = None
        converged = False
        best_err = pair_error(theta, mine_pairs(val, theta))
        best_theta = theta
        for it in range(self.max_iters):
            pairs = mine_pairs(train, theta)
            if prev is not None and pairs.key() == prev:
                converged = True
                break
            prev = pairs.key()
            before = objective(theta, pairs)
            theta = minimize_objective(theta, pairs, self.inner_max_iter)
            after = objective(theta, pairs)
            val_err = pair_error(theta, mine_pairs(val, theta))
            if val_err < best_err:
                best_err, best_theta = val_err, theta
            history.append(IterationRecord(
                iteration=it,
                objective_after_mining=before,
                objective_after_update=after,
                validation_error=val_err,
                n_cannot=len(pairs.cannot_link),
                n_must=len(pairs.must_link),
            ))
        return best_theta, best_err, history, converged

    def fit(self, data: LabeledClusterSet) -> MetricParams:
        if len(data) == 0 or data.n_clusters == 0:
            raise TrainingError("no labeled clusters to learn from")
        rng = np.random.default_rng(self.seed)
        train, val = split_images(data, self.val_fraction, rng)
        report = FitReport()
        probe = mine_pairs(train, np.ones(N_FEATURES + 1))
        if len(probe.cannot_link) == 0:
            report.warnings.append("no cannot-link pairs: threshold is only bounded by must-link pairs")
        if len(probe.must_link) == 0:
            raise TrainingError("no cluster has two or more members")

        best = None
        for r in range(max(1, self.restarts)):
            theta0 = random_theta(np.random.default_rng([self.seed, r]))
            theta, err, history, converged = self._run(train, val, theta0)
            report.restarts.append(history)
            report.converged.append(converged)
            if not np.all(np.isfinite(theta)):
                report.warnings.append(f"restart {r} diverged")
                continue
            if best is None or err < best[0]:
                best = (err, r, theta)
        self.report_ = report
        if best is None:
            raise TrainingError("all restarts diverged:\n" + report.format())
        report.best_validation_error, report.best_restart, theta = best
        return MetricParams.from_theta(theta)


def fit(data: LabeledClusterSet, max_iters: int = 20, restarts: int = 5, seed: int = 0,
        val_fraction: float = 0.3) -> MetricParams:
    return SelfTrainingMetricLearner(max_iters, restarts, seed, val_fraction).fit(data)
