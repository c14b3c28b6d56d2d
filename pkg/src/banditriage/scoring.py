"""Risk scorers: the fixed 2/1/1 rule, a linear margin ranker, and a
pairwise-interaction (degree-2) ranker, trained by deterministic seeded
stochastic subgradient descent on the L2-regularized hinge loss.

Scores are raw margins. Any monotone calibration of a margin induces the
same ranking, and ranking is the only downstream use, so no calibration
step exists here.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .records import FEATURE_NAMES, N_FEATURES

log = logging.getLogger(__name__)


class ModelKind(Enum):
    RULE_BASED = "rule_based"
    LINEAR = "linear"
    POLY2 = "poly2"


class DegenerateTrainingError(Exception):
    """Training set has fewer than two classes."""


#: The expert rule: contact-with-confirmed weighs 2, cough and fever 1 each.
RULE_WEIGHTS = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RiskModel:
    """A scorer over the canonical base feature space.

    ``weights`` live in the model's own feature space: base features for
    RULE_BASED/LINEAR, base plus pairwise products for POLY2.
    """

    kind: ModelKind
    weights: np.ndarray
    bias: float
    base_dim: int = N_FEATURES

    @property
    def feature_space_dim(self) -> int:
        return len(self.weights)

    def __post_init__(self):
        expected = poly2_dim(self.base_dim) if self.kind is ModelKind.POLY2 else self.base_dim
        if len(self.weights) != expected:
            raise ValueError(
                f"{self.kind.value} model over base_dim={self.base_dim} "
                f"needs {expected} weights, got {len(self.weights)}"
            )


def rule_based_model() -> RiskModel:
    return RiskModel(kind=ModelKind.RULE_BASED, weights=RULE_WEIGHTS.copy(), bias=0.0)


def rule_score(fv: np.ndarray) -> float:
    """2*contact + cough + fever; integer-valued in {0,1,2,3,4}."""
    fv = np.asarray(fv, dtype=float)
    if fv.shape != (N_FEATURES,):
        raise ValueError(f"expected a base feature vector of dim {N_FEATURES}, got shape {fv.shape}")
    return float(RULE_WEIGHTS @ fv)


def poly2_dim(d: int) -> int:
    return d + d * (d - 1) // 2


def pair_order(d: int) -> list[tuple[int, int]]:
    """Index pairs (i, j), i < j, in lexicographic order: the documented
    layout of the interaction block appended by :func:`expand_poly2`."""
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def expand_poly2(fv: np.ndarray) -> np.ndarray:
    """Append all distinct pairwise products to the base features.

    Squares are omitted: inputs are binary, so x*x == x adds nothing.
    Accepts a single vector (1-D) or a stacked matrix (2-D, row per vector).
    """
    fv = np.asarray(fv, dtype=float)
    single = fv.ndim == 1
    X = fv[None, :] if single else fv
    d = X.shape[1]
    pairs = pair_order(d)
    if pairs:
        left = X[:, [i for i, _ in pairs]]
        right = X[:, [j for _, j in pairs]]
        out = np.hstack([X, left * right])
    else:
        out = X.copy()
    return out[0] if single else out


@dataclass(frozen=True)
class TrainConfig:
    regularization: float = 1e-4
    epochs: int = 20
    seed: int = 0
    class_weighting: str = "balanced"  # "none" | "balanced"

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValueError("regularization must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.class_weighting not in ("none", "balanced"):
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")


def hinge_objective(
    X: np.ndarray,
    y_signed: np.ndarray,
    w: np.ndarray,
    lam: float,
    costs: np.ndarray,
) -> float:
    """lam/2 ||w||^2 + mean(cost * max(0, 1 - y * Xw)) over augmented inputs."""
    margins = y_signed * (X @ w)
    hinge = np.maximum(0.0, 1.0 - margins)
    return 0.5 * lam * float(w @ w) + float(np.mean(costs * hinge))


def _class_costs(y_signed: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "none":
        return np.ones(len(y_signed))
    n = len(y_signed)
    n_pos = int((y_signed > 0).sum())
    n_neg = n - n_pos
    costs = np.where(y_signed > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return costs


def train(
    X: np.ndarray,
    y: np.ndarray,
    kind: ModelKind,
    config: TrainConfig | None = None,
) -> RiskModel:
    """Fit a margin ranker on (base feature matrix, binary labels).

    Single-pass-per-epoch stochastic subgradient descent with step size
    1/(lam*t); the visit order per epoch is a seeded shuffle, so identical
    inputs and config give bitwise-identical weights. The bias is trained as
    an augmented, regularized constant coordinate. The returned iterate is
    the epoch-end candidate with the lowest regularized objective (never
    worse than the zero vector).
    """
    config = config or TrainConfig()
    if kind not in (ModelKind.LINEAR, ModelKind.POLY2):
        raise ValueError(f"cannot train model kind {kind.value}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if len(X) == 0:
        raise ValueError("empty training set")
    base_dim = X.shape[1]
    y_signed = np.where(np.asarray(y, dtype=bool), 1.0, -1.0)
    if len(np.unique(y_signed)) < 2:
        raise DegenerateTrainingError("training set contains a single class")

    if kind is ModelKind.POLY2:
        X = expand_poly2(X)
    Xa = np.hstack([X, np.ones((len(X), 1))])  # bias as last coordinate
    n, d = Xa.shape
    lam = config.regularization
    costs = _class_costs(y_signed, config.class_weighting)

    rng = np.random.default_rng(config.seed)
    w = np.zeros(d)
    best_w = w.copy()
    best_obj = hinge_objective(Xa, y_signed, w, lam, costs)
    t = 0
    for _ in range(config.epochs):
        # The raw iterate oscillates (class costs inflate subgradient norms);
        # the within-epoch average is the stable candidate.
        w_sum = np.zeros(d)
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y_signed[i] * (Xa[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * costs[i] * y_signed[i]) * Xa[i]
            w_sum += w
        w_avg = w_sum / n
        obj = hinge_objective(Xa, y_signed, w_avg, lam, costs)
        if obj < best_obj:
            best_obj = obj
            best_w = w_avg

    return RiskModel(kind=kind, weights=best_w[:-1], bias=float(best_w[-1]), base_dim=base_dim)


def score(model: RiskModel, fv: np.ndarray) -> float:
    """Risk score of one base feature vector under the model."""
    fv = np.asarray(fv, dtype=float)
    if fv.shape != (model.base_dim,):
        raise ValueError(
            f"feature vector of shape {fv.shape} does not match model base_dim {model.base_dim}"
        )
    if model.kind is ModelKind.POLY2:
        fv = expand_poly2(fv)
    return float(model.weights @ fv + model.bias)


def score_matrix(model: RiskModel, X: np.ndarray) -> np.ndarray:
    """Vectorized :func:`score` over rows of a base feature matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.base_dim:
        raise ValueError(
            f"feature matrix of shape {X.shape} does not match model base_dim {model.base_dim}"
        )
    if model.kind is ModelKind.POLY2:
        X = expand_poly2(X)
    return X @ model.weights + model.bias


# ---------------------------------------------------------------------------
# Serialization: versioned plain text, full float round-trip via repr().
# ---------------------------------------------------------------------------

_FORMAT_TAG = "banditriage-model v1"


def feature_order_hash() -> str:
    return hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:16]


def save_model(
    model: RiskModel,
    path: str | Path,
    *,
    manifest: str = "-",
    trained_weeks: str = "-",
) -> None:
    lines = [
        _FORMAT_TAG,
        f"manifest {manifest}",
        f"trained_weeks {trained_weeks}",
        f"kind {model.kind.value}",
        f"base_dim {model.base_dim}",
        f"feature_hash {feature_order_hash()}",
        f"bias {model.bias!r}",
        f"weights {len(model.weights)}",
    ]
    lines.extend(repr(float(w)) for w in model.weights)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def model_metadata(path: str | Path) -> dict[str, str]:
    """Header fields of a saved model (kind, trained_weeks, manifest, ...)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != _FORMAT_TAG:
        raise ValueError(f"{path}: not a {_FORMAT_TAG} file")
    fields = {}
    for line in text[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
        if key == "weights":
            break
    return fields


def load_model(path: str | Path) -> RiskModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != _FORMAT_TAG:
        raise ValueError(f"{path}: not a {_FORMAT_TAG} file")
    fields = {}
    idx = 1
    for idx in range(1, len(text)):
        key, _, value = text[idx].partition(" ")
        fields[key] = value
        if key == "weights":
            break
    for required in ("kind", "base_dim", "feature_hash", "bias", "weights"):
        if required not in fields:
            raise ValueError(f"{path}: missing field {required!r}")
    if fields["feature_hash"] != feature_order_hash():
        raise ValueError(f"{path}: feature order hash mismatch; model is for a different encoding")
    n_weights = int(fields["weights"])
    weight_lines = text[idx + 1 : idx + 1 + n_weights]
    if len(weight_lines) != n_weights:
        raise ValueError(f"{path}: expected {n_weights} weight lines")
    weights = np.array([float(line) for line in weight_lines])
    return RiskModel(
        kind=ModelKind(fields["kind"]),
        weights=weights,
        bias=float(fields["bias"]),
        base_dim=int(fields["base_dim"]),
    )
