"""Evaluation metrics and the experiment report container."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInputError, ParameterError

SMOOTH_WINDOW = 10


@dataclass(frozen=True)
class ScoreDistribution:
    mu_left: float
    sigma_left: float
    mu_right: float
    sigma_right: float
    weighted_mu_left: float
    weighted_mu_right: float

    @property
    def separation(self):
        return abs(self.mu_left - self.mu_right)


def feature_distance(features_left, features_right, mode="concat"):
    """Inter-class over intra-class distance of two feature clouds.

    The inter-class term is the Euclidean distance between the class means.
    The intra-class term is built from the per-dimension population standard
    deviations of each class:

    ``concat``  norm of the two std vectors concatenated (default)
    ``sum``     sum of the two std-vector norms
    ``pooled``  norm of the pooled per-dimension std
    """
    a = np.asarray(features_left, dtype=float)
    b = np.asarray(features_right, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) < 2 or len(b) < 2:
        raise ParameterError("each class needs at least two feature vectors")
    inter = float(np.linalg.norm(a.mean(0) - b.mean(0)))
    sa, sb = a.std(0), b.std(0)
    if mode == "concat":
        intra = float(np.linalg.norm(np.concatenate([sa, sb])))
    elif mode == "sum":
        intra = float(np.linalg.norm(sa) + np.linalg.norm(sb))
    elif mode == "pooled":
        intra = float(np.linalg.norm(np.sqrt((sa ** 2 + sb ** 2) / 2)))
    else:
        raise ParameterError(f"unknown distance mode {mode!r}")
    if intra == 0:
        if inter == 0:
            return 0.0
        raise DegenerateInputError("intra-class spread is zero")
    return inter / intra


def success_proportion(accuracies, threshold_t):
    acc = np.asarray([getattr(a, "accuracy", a) for a in accuracies], dtype=float)
    if acc.size == 0:
        raise ParameterError("need at least one trial")
    return float(np.mean(acc >= threshold_t))


def moving_average(values, window=SMOOTH_WINDOW):
    """Trailing moving average, window truncated at the start of the sequence."""
    x = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def score_trajectory(decisions, labels, window=SMOOTH_WINDOW):
    """Per-class smoothed sequence of per-trial mean decision values.

    Returns ``{"left": array, "right": array}``; each array follows the trial
    order of that class.
    """
    d = np.asarray(decisions, dtype=float)
    y = np.asarray(labels)
    out = {}
    for name, cls in (("left", 1), ("right", -1)):
        seq = d[y == cls]
        if seq.size == 0:
            raise ParameterError(f"no trials of class {name}")
        out[name] = moving_average(seq, window)
    return out


def weighted_score_mean(decisions, weights):
    d = np.asarray(decisions, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DegenerateInputError("weights sum to zero")
    if np.all(w == w[0]):
        return float(d.mean())
    return float(w @ d / total)


def fit_score_distribution(decisions, labels, weights=None):
    d = np.asarray(decisions, dtype=float)
    y = np.asarray(labels)
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=float)
    stats = {}
    for name, cls in (("left", 1), ("right", -1)):
        m = y == cls
        if m.sum() < 2:
            raise ParameterError(f"need at least two {name} decisions")
        stats[f"mu_{name}"] = float(d[m].mean())
        stats[f"sigma_{name}"] = float(d[m].std())
        wm = w[m]
        stats[f"weighted_mu_{name}"] = weighted_score_mean(d[m], wm) if wm.sum() > 0 else float(d[m].mean())
    return ScoreDistribution(**stats)


# ---------------------------------------------------------------------------
# report


def _finite_or_null(obj):
    """NaN/inf become null so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_null(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


@dataclass
class SessionSummary:
    index: int
    calibration: bool
    accuracy: float
    offline_accuracy: float
    success_proportion: float
    distance: float
    scores: ScoreDistribution
    n_trials: int


@dataclass
class TrialRecord:
    session: int
    index: int
    label: int
    instruction: str
    pair_position: str  # "first", "next" or "single"
    mode: str | None  # latent subject mode; None for replayed data
    accuracy: float
    offline_accuracy: float
    success: bool
    mean_decision: float
    mean_p_left: float
    final_c_left: float
    weight: float


@dataclass
class ExperimentReport:
    mode: str
    sessions: list
    trials: list
    training_traces: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)
    subject_trace: list = field(default_factory=list)
    source: str = "simulate"

    @property
    def accuracy(self):
        return [s.accuracy for s in self.sessions]

    @property
    def offline_accuracy(self):
        return [s.offline_accuracy for s in self.sessions]

    @property
    def success_proportions(self):
        return [s.success_proportion for s in self.sessions]

    @property
    def distances(self):
        return [s.distance for s in self.sessions]

    def to_dict(self):
        return {
            "mode": self.mode,
            "source": self.source,
            "sessions": [asdict(s) for s in self.sessions],
            "trials": [asdict(t) for t in self.trials],
            "training_traces": [[asdict(r) for r in tr] for tr in self.training_traces],
            "trajectories": {k: [float(x) for x in v] for k, v in self.trajectories.items()},
            "subject_trace": self.subject_trace,
        }

    def to_json(self):
        return json.dumps(_finite_or_null(self.to_dict()), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session", "mode", "accuracy", "success_proportion", "distance",
                    "mu_L", "mu_R", "weighted_mu_L", "weighted_mu_R"])
        for s in self.sessions:
            sc = s.scores
            w.writerow([s.index, self.mode, repr(s.accuracy), repr(s.success_proportion), repr(s.distance),
                        repr(sc.mu_left), repr(sc.mu_right), repr(sc.weighted_mu_left), repr(sc.weighted_mu_right)])
        return buf.getvalue()
