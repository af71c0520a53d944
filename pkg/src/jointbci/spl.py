"""Self-paced sample reweighting around weighted CSP + weighted SVM.

The pace regulariser has a closed-form minimiser in the weights: a sample with
normalised loss ``L`` below the threshold ``lam`` gets weight
``log(L + 1 - lam) / log(1 - lam)``, anything at or above the threshold gets 0.
The threshold follows the recruited fraction ``Lambda``, which grows by
``dLambda`` per round until every training sample is in play; the round with the
best validation accuracy is kept.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import csp, svm
from .errors import DegenerateClassError, InputError, ParameterError

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1.0 - 1e-6
NORM_EPS = 1e-9
# normalised losses live in [0, LOSS_CEIL] so the largest one stays below LAMBDA_MAX
LOSS_CEIL = 1.0 - 2e-6
# hinge losses this close to zero are solver noise, not signal
LOSS_FLOOR = 10 * svm.TOL


@dataclass(frozen=True)
class PaceSchedule:
    capital_lambda: float = 0.2
    delta_lambda: float = 0.05
    lam: float = 0.5

    def __post_init__(self):
        if not 0 < self.capital_lambda <= 1:
            raise ParameterError(f"Lambda must be in (0, 1], got {self.capital_lambda}")
        if not self.delta_lambda > 0:
            raise ParameterError(f"delta Lambda must be > 0, got {self.delta_lambda}")
        if not 0 < self.lam < 1:
            raise ParameterError(f"lambda must be in (0, 1), got {self.lam}")


@dataclass(frozen=True, eq=False)
class SampleWeightVector:
    v: np.ndarray
    losses: np.ndarray


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    capital_lambda: float
    lam: float
    recruited_count: int
    train_mean_loss: float
    val_accuracy: float
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class TrainedDecoder:
    """Fitted filters (``None`` in feature mode), SVM, and the chosen round's weights."""

    bank: object
    model: svm.DecoderModel
    weights: SampleWeightVector
    best_iteration: int
    val_accuracy: float
    trace: list = field(default_factory=list)
    lam: float = None
    loss_scale: float = 1.0

    def features(self, covs):
        """Features for mean-removed slice covariances (or pass-through in feature mode)."""
        if self.bank is None:
            return np.asarray(covs, dtype=float)
        return csp.features_from_covariances(self.bank, covs)

    def decisions(self, covs):
        return svm.decision_value(self.model, self.features(covs))

    def sample_weights(self, covs, labels):
        """Weights for arbitrary samples under the chosen round's threshold.

        Unit weights when the decoder was trained without reweighting.
        """
        if self.lam is None:
            return np.ones(len(labels))
        hinge = hinge_losses(self.model, self.features(covs), labels)
        return weight_from_loss(np.minimum(hinge / self.loss_scale, LOSS_CEIL), self.lam)


def hinge_losses(model, features, labels):
    """Per-sample hinge loss with sub-tolerance values snapped to zero."""
    raw = svm.per_sample_hinge_loss(model, features, labels)
    return np.where(raw < LOSS_FLOOR, 0.0, raw)


def _check_lambda(lam):
    if not 0 < lam < 1:
        raise ParameterError(f"lambda must be in (0, 1), got {lam}")


def weight_from_loss(loss, lam):
    """Closed-form optimal weight for a normalised loss under threshold ``lam``."""
    _check_lambda(lam)
    loss = np.asarray(loss, dtype=float)
    if np.any(loss < 0):
        raise ParameterError("losses must be non-negative")
    inside = loss < lam
    safe = np.where(inside, loss, 0.0)
    v = np.where(inside, np.log(safe + (1.0 - lam)) / math.log(1.0 - lam), 0.0)
    v = np.clip(v, 0.0, 1.0)
    return float(v) if v.ndim == 0 else v


def spl_objective(losses, v, lam):
    """``sum_i v_i L_i + (1 - lam) v_i - (1 - lam)^v_i / log(1 - lam)``."""
    _check_lambda(lam)
    losses = np.asarray(losses, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > 1):
        raise ParameterError("weights must lie in [0, 1]")
    q = 1.0 - lam
    return float(np.sum(v * losses + q * v - q ** v / math.log(q)))


def regularized_objective(model, features, labels, v, lam, scale):
    """Pace objective with the SVM norm term, for fixed loss scale ``scale``.

    The weighted SVM refit minimises ``0.5||w||^2 + C sum v_i hinge_i``; dividing
    by ``C * scale`` shows it minimises this objective over ``(w, b)`` for fixed
    ``v``, while :func:`weight_from_loss` minimises it over ``v`` for fixed model.
    """
    hinge = hinge_losses(model, features, labels)
    norm_term = 0.5 * float(model.w @ model.w) / (model.C * scale)
    return norm_term + spl_objective(hinge / scale, v, lam)


def loss_scale(losses):
    """Divisor mapping raw losses into ``[0, LOSS_CEIL]``."""
    return (float(np.max(losses)) + NORM_EPS) / LOSS_CEIL


def normalize_losses(losses):
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ParameterError("losses must be non-empty")
    return losses / loss_scale(losses)


def lambda_from_pace(losses, capital_lambda, normalized=False):
    """Threshold recruiting a fraction ``capital_lambda`` of the samples.

    The ``capital_lambda`` quantile (linear interpolation) of the normalised
    losses, clamped to ``[LAMBDA_MIN, LAMBDA_MAX]``. A loss tied with the
    threshold is recruited: the threshold is nudged just above it.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ParameterError("losses must be non-empty")
    if not 0 < capital_lambda <= 1:
        raise ParameterError(f"Lambda must be in (0, 1], got {capital_lambda}")
    norm = losses if normalized else normalize_losses(losses)
    if capital_lambda >= 1:
        return LAMBDA_MAX
    lam = float(np.quantile(norm, capital_lambda))
    if np.any(norm == lam):
        lam = float(np.nextafter(lam, np.inf))
    return min(max(lam, LAMBDA_MIN), LAMBDA_MAX)


# ---------------------------------------------------------------------------
# training loop


def _stratified_subset(labels, fraction, rng):
    n = len(labels)
    k_total = math.ceil(fraction * n - 1e-9)
    picked = []
    classes = (1, -1)
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        k = max(1, min(len(idx), round(k_total * len(idx) / n)))
        picked.append(rng.choice(idx, size=k, replace=False))
    return np.sort(np.concatenate(picked))


class _Stage:
    """One CSP + SVM fit on a weighted training set."""

    def __init__(self, train_covs, train_sample_covs, labels, n_pairs, C):
        self.train_covs = train_covs
        self.train_sample_covs = train_sample_covs
        self.labels = labels
        self.n_pairs = n_pairs
        self.C = C
        self.feature_mode = train_covs is None

    def fit(self, weights):
        if self.feature_mode:
            bank = None
            feats = self.train_sample_covs
        else:
            bank = csp.fit_csp_from_covariances(self.train_covs, weights, self.labels, self.n_pairs)
            feats = csp.features_from_covariances(bank, self.train_sample_covs)
        model = svm.fit_weighted_svm(feats, self.labels, weights, C=self.C)
        return bank, model, feats


def _validation_accuracy(bank, model, val_inputs, val_labels, feature_mode):
    feats = val_inputs if feature_mode else csp.features_from_covariances(bank, val_inputs)
    pred = svm.hard_label(svm.decision_value(model, feats))
    return float(np.mean(pred == val_labels))


def _ensure_both_classes(v, losses, labels):
    """Give the lowest-loss sample of an emptied class a unit weight."""
    fallback = False
    for cls in (1, -1):
        mask = labels == cls
        if not np.any(v[mask] > 0):
            idx = np.flatnonzero(mask)
            best = idx[np.argmin(losses[idx])]
            v = v.copy()
            v[best] = 1.0
            fallback = True
    return v, fallback


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Per-slice second moments: trace-normalised (for CSP) and mean-removed (for features)."""

    trial: np.ndarray
    sample: np.ndarray

    def __len__(self):
        return len(self.trial)

    def __getitem__(self, idx):
        return CovarianceSet(self.trial[idx], self.sample[idx])

    @classmethod
    def from_slices(cls, data):
        data = np.asarray(data, dtype=float)
        return cls(csp.trial_covariances(data), csp.sample_covariances(data))

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(np.concatenate([s.trial for s in sets]), np.concatenate([s.sample for s in sets]))


def _stage_for(x, y, n_pairs, C):
    if isinstance(x, CovarianceSet):
        return _Stage(x.trial, x.sample, y, n_pairs, C)
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return _Stage(None, x, y, n_pairs, C)
    if x.ndim == 3:
        cs = CovarianceSet.from_slices(x)
        return _Stage(cs.trial, cs.sample, y, n_pairs, C)
    raise InputError("inputs must be (n, d) features, (n, channels, samples) slices or a CovarianceSet")


def _val_inputs(x):
    if isinstance(x, CovarianceSet):
        return x.sample
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 2 else csp.sample_covariances(x)


def train_joint_decoder(train_x, train_y, val_x, val_y, lambda0=0.2, delta_lambda=0.05,
                        seed=0, C=1.0, n_pairs=3, calib_a_bound=svm.CALIB_A_BOUND):
    """Self-paced training of weighted CSP + weighted SVM.

    ``train_x``/``val_x`` are raw slices ``(n, channels, samples)``, a
    :class:`CovarianceSet`, or precomputed feature rows ``(n, d)``; with
    feature rows the CSP stage is skipped. Labels are +1 (Left) / -1 (Right).
    ``seed`` drives the initial stratified subset only.
    """
    train_y = np.asarray(train_y).astype(int)
    val_y = np.asarray(val_y).astype(int)
    if not 0 < lambda0 <= 1:
        raise ParameterError(f"initial Lambda must be in (0, 1], got {lambda0}")
    if not delta_lambda > 0:
        raise ParameterError(f"delta Lambda must be > 0, got {delta_lambda}")
    for name, y in (("train", train_y), ("validation", val_y)):
        if not (np.any(y == 1) and np.any(y == -1)):
            raise DegenerateClassError(f"{name} set must contain both classes")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise InputError("inputs and labels differ in length")
    stage = _stage_for(train_x, train_y, n_pairs, C)
    return _pace_loop(stage, train_y, _val_inputs(val_x), val_y, lambda0, delta_lambda, seed, calib_a_bound)


def _pace_loop(stage, y, val_inputs, val_y, lambda0, delta_lambda, seed, calib_a_bound):
    rng = np.random.default_rng(seed)
    n = len(y)
    v = np.zeros(n)
    v[_stratified_subset(y, lambda0, rng)] = 1.0

    big_lambda = lambda0
    bank, model, feats = stage.fit(v)
    raw = hinge_losses(model, feats, y)
    losses = normalize_losses(raw)
    lam = lambda_from_pace(losses, big_lambda, normalized=True)
    v = weight_from_loss(losses, lam)
    acc = _validation_accuracy(bank, model, val_inputs, val_y, stage.feature_mode)
    trace = [TraceRow(0, big_lambda, lam, int(np.sum(v > 0)), float(raw.mean()), acc)]
    best = dict(acc=acc, k=0, bank=bank, model=model, feats=feats, lam=lam,
                scale=loss_scale(raw), weights=SampleWeightVector(v.copy(), losses.copy()))

    k = 0
    while big_lambda < 1 - 1e-12:
        big_lambda = min(1.0, big_lambda + delta_lambda)
        k += 1
        lam = lambda_from_pace(losses, big_lambda, normalized=True)
        v = weight_from_loss(losses, lam)
        v, fallback = _ensure_both_classes(v, losses, y)
        recruited = int(np.sum(v > 0))
        bank, model, feats = stage.fit(v)
        acc = _validation_accuracy(bank, model, val_inputs, val_y, stage.feature_mode)
        raw = hinge_losses(model, feats, y)
        losses = normalize_losses(raw)
        v = weight_from_loss(losses, lam)
        trace.append(TraceRow(k, big_lambda, lam, recruited, float(raw.mean()), acc, fallback))
        if acc > best["acc"]:
            best = dict(acc=acc, k=k, bank=bank, model=model, feats=feats, lam=lam,
                        scale=loss_scale(raw), weights=SampleWeightVector(v.copy(), losses.copy()))

    model = svm.calibrate_posterior(best["model"], best["feats"], y, calib_a_bound)
    return TrainedDecoder(bank=best["bank"], model=model, weights=best["weights"],
                          best_iteration=best["k"], val_accuracy=best["acc"], trace=trace,
                          lam=best["lam"], loss_scale=best["scale"])


def train_unweighted_decoder(train_x, train_y, C=1.0, n_pairs=3, calib_a_bound=svm.CALIB_A_BOUND):
    """Plain CSP + SVM on every sample with unit weight (the RETRAIN baseline)."""
    y = np.asarray(train_y).astype(int)
    ones = np.ones(len(y))
    stage = _stage_for(train_x, y, n_pairs, C)
    bank, model, feats = stage.fit(ones)
    model = svm.calibrate_posterior(model, feats, y, calib_a_bound)
    acc = float(np.mean(svm.hard_label(svm.decision_value(model, feats)) == y))
    raw = hinge_losses(model, feats, y)
    trace = [TraceRow(0, 1.0, LAMBDA_MAX, len(y), float(raw.mean()), acc)]
    return TrainedDecoder(bank=bank, model=model, weights=SampleWeightVector(ones, normalize_losses(raw)),
                          best_iteration=0, val_accuracy=acc, trace=trace, lam=None,
                          loss_scale=loss_scale(raw))


def trace_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "Lambda", "lambda", "recruited_count", "train_mean_loss", "val_accuracy"])
    for r in trace:
        w.writerow([r.iteration, repr(r.capital_lambda), repr(r.lam), r.recruited_count,
                    repr(r.train_mean_loss), repr(r.val_accuracy)])
    return buf.getvalue()
