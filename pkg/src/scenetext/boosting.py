"""Discrete AdaBoost over decision stumps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PRECISION_FLOOR = 0.501
PRECISION_CEIL = 0.999
_MIN_ERR = 1e-10
# weighted errors within this of 0.5 are chance level (summation round-off)
_CHANCE_TOL = 1e-12
_TIE_TOL = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Stump:
    """Votes ``polarity`` when ``x[feature] > threshold``, ``-polarity`` otherwise."""

    feature: int
    threshold: float
    polarity: int
    alpha: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(X[:, self.feature] > self.threshold, self.polarity, -self.polarity)


@dataclass(frozen=True)
class StumpEnsemble:
    stumps: tuple[Stump, ...]
    n_features: int
    feature_names: tuple[str, ...] = ()
    validation_precision: float | None = None
    stop_reason: str = ""
    train_errors: tuple[float, ...] = field(default=(), compare=False)

    @property
    def rounds(self) -> int:
        return len(self.stumps)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, single

    def score(self, X):
        X, single = self._check(X)
        s = np.zeros(X.shape[0])
        for st in self.stumps:
            s += st.alpha * st.predict(X)
        return float(s[0]) if single else s

    def predict(self, X):
        s = self.score(X)
        if np.ndim(s) == 0:
            return 1 if s >= 0 else -1
        return np.where(s >= 0, 1, -1)

    def with_precision(self, p: float) -> "StumpEnsemble":
        return StumpEnsemble(self.stumps, self.n_features, self.feature_names, float(p),
                             self.stop_reason, self.train_errors)


def _best_stump(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted-error-minimizing stump over midpoint thresholds of every feature.

    Returns ``(err, feature, threshold, polarity)`` or None when no feature
    has two distinct values. Ties resolve to the lowest feature, then the
    lowest threshold, then polarity +1.
    """
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ws = w[order]
    pos = np.cumsum(ws * (y[order] > 0), axis=0)
    neg = np.cumsum(ws * (y[order] < 0), axis=0)
    total = w.sum()
    total_neg = neg[-1]
    # split after sorted position i: left = x <= thr, right = x > thr
    err_plus = pos[:-1] + (total_neg - neg[:-1])
    err_minus = total - err_plus
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    err = np.stack([err_plus, err_minus], axis=-1)
    err[~valid] = np.inf
    flat = np.transpose(err, (1, 0, 2))  # (feature, split, polarity)
    # equal errors may differ by round-off in the cumulative sums; take the
    # first candidate (in feature, split, polarity order) within tolerance
    k = int(np.argmax(flat.ravel() <= flat.min() + _TIE_TOL))
    f, i, s = np.unravel_index(k, flat.shape)
    thr = 0.5 * (xs[i, f] + xs[i + 1, f])
    return float(flat[f, i, s]), int(f), float(thr), 1 if s == 0 else -1


def train(X, y, rounds: int = 100, feature_names=()) -> StumpEnsemble:
    """Discrete AdaBoost. Stops early when the best stump has error >= 0.5
    (not added) or error 0 (added, then stop)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n_samples, n_features) matching y")
    if X.shape[0] < 2:
        raise TrainingError("need at least two samples")
    if not set(np.unique(y)) <= {-1, 1}:
        raise ValueError("labels must be +1/-1")
    if len(np.unique(y)) < 2:
        raise TrainingError("both classes must be present")
    y = y.astype(np.int64)
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    stumps = []
    margin = np.zeros(n)
    errors = []
    reason = "rounds exhausted"
    for _ in range(rounds):
        best = _best_stump(X, y, w)
        if best is None:
            reason = "no split available (weighted error 0.5)"
            break
        err, f, thr, pol = best
        if err >= 0.5 - _CHANCE_TOL:
            reason = f"weighted error {err:.4f} >= 0.5"
            break
        alpha = 0.5 * np.log((1.0 - err) / max(err, _MIN_ERR))
        stump = Stump(f, thr, pol, float(alpha))
        stumps.append(stump)
        h = stump.predict(X)
        margin += alpha * h
        errors.append(float(np.mean(np.where(margin >= 0, 1, -1) != y)))
        if err <= _MIN_ERR:
            reason = "zero weighted error"
            break
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
    return StumpEnsemble(tuple(stumps), X.shape[1], tuple(feature_names), None, reason, tuple(errors))


def measure_precision(ensemble: StumpEnsemble, X, y) -> float:
    """Validation precision TP / (TP + FP), clamped to [0.501, 0.999]."""
    y = np.asarray(y)
    if not np.any(y > 0):
        raise ValueError("validation set has no positives")
    pred = np.asarray(ensemble.predict(X))
    predicted = pred > 0
    if not predicted.any():
        raise TrainingError("classifier predicts no positives; precision undefined")
    p = np.sum(predicted & (y > 0)) / np.sum(predicted)
    return float(np.clip(p, PRECISION_FLOOR, PRECISION_CEIL))


def train_with_validation(X, y, rounds: int = 100, feature_names=(), val_fraction: float = 0.3,
                          seed: int = 0) -> StumpEnsemble:
    """Train on a seeded split and attach the precision measured on the held-out part."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(y))
    n_val = int(round(val_fraction * len(y)))
    val, tr = idx[:n_val], idx[n_val:]
    if n_val == 0 or len(np.unique(y[tr])) < 2 or not np.any(y[val] > 0):
        tr = val = idx
    model = train(X[tr], y[tr], rounds, feature_names)
    return model.with_precision(measure_precision(model, X[val], y[val]))
