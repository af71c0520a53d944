"""Sample-weighted linear soft-margin SVM with Platt posterior calibration.

The primal problem is::

    min_{w,b}  0.5 * ||w||^2 + C * sum_i v_i * max(0, 1 - y_i (w.x_i + b))

solved in the dual with per-sample box constraints ``0 <= alpha_i <= C v_i``
and the equality constraint ``sum_i alpha_i y_i = 0`` (the bias is not
regularised). Labels are +1 for Left and -1 for Right.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numba
import numpy as np

from .errors import DegenerateClassError, InputError, ParameterError
from .signal import Label

TOL = 1e-10
MAX_EPOCHS = 10_000
CALIB_A_BOUND = 50.0


@dataclass(frozen=True, eq=False)
class DecoderModel:
    w: np.ndarray
    b: float
    C: float = 1.0
    calib_a: float = 0.0
    calib_b: float = 0.0
    n_iter: int = 0

    def to_dict(self):
        return {
            "w": self.w.tolist(),
            "b": float(self.b),
            "C": float(self.C),
            "calib_a": float(self.calib_a),
            "calib_b": float(self.calib_b),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            w=np.asarray(d["w"], dtype=float),
            b=float(d["b"]),
            C=float(d["C"]),
            calib_a=float(d["calib_a"]),
            calib_b=float(d["calib_b"]),
        )


@dataclass(frozen=True)
class Prediction:
    decision: float
    label: Label
    p_left: float


@numba.njit(cache=True)
def _smo(x, y, upper, tol, max_iter):
    n, d = x.shape
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.empty(n)
    for t in range(n):
        s = 0.0
        for k in range(d):
            s += x[t, k] * x[t, k]
        diag[t] = s
    tau = 1e-12
    it = 0
    while it < max_iter:
        # maximal violating pair, second-order choice of j
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] == 1:
                if alpha[t] < upper[t] and -grad[t] >= gmax:
                    gmax = -grad[t]
                    i = t
            else:
                if alpha[t] > 0 and grad[t] >= gmax:
                    gmax = grad[t]
                    i = t
        gmin = np.inf
        j = -1
        obj_min = np.inf
        if i >= 0:
            for t in range(n):
                in_low = (y[t] == 1 and alpha[t] > 0) or (y[t] == -1 and alpha[t] < upper[t])
                if not in_low:
                    continue
                yg = -y[t] * grad[t]
                if yg <= gmin:
                    gmin = yg
                b_it = gmax - yg
                if b_it > 0:
                    kit = 0.0
                    for k in range(d):
                        kit += x[i, k] * x[t, k]
                    a_it = diag[i] + diag[t] - 2.0 * kit
                    if a_it <= 0:
                        a_it = tau
                    val = -(b_it * b_it) / a_it
                    if val <= obj_min:
                        obj_min = val
                        j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            break
        it += 1

        kij = 0.0
        for k in range(d):
            kij += x[i, k] * x[j, k]
        old_ai = alpha[i]
        old_aj = alpha[j]
        ci = upper[i]
        cj = upper[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] - 2.0 * kij
            if quad <= 0:
                quad = tau
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > ci - cj:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = ci - diff
            else:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = cj + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * kij
            if quad <= 0:
                quad = tau
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > ci:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = total - ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > cj:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = total - cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for t in range(n):
            kti = 0.0
            ktj = 0.0
            for k in range(d):
                kti += x[t, k] * x[i, k]
                ktj += x[t, k] * x[j, k]
            grad[t] += y[t] * (y[i] * kti * dai + y[j] * ktj * daj)
    return alpha, it


def _best_bias(scores, y, cost):
    """Exact minimiser of the weighted hinge term over the bias for fixed ``w``.

    The term is convex piecewise linear in ``b`` with kinks at ``y_i - s_i``;
    when the minimum is flat the midpoint of the optimal interval is returned.
    """
    knots = np.unique(y - scores)
    margins = 1.0 - y[None, :] * (scores[None, :] + knots[:, None])
    values = np.maximum(margins, 0.0) @ cost
    best = values.min()
    near = knots[values <= best + 1e-12 * max(1.0, abs(best))]
    return 0.5 * (near.min() + near.max())


def _check_inputs(features, labels, weights):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=np.float64)
    v = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y) or len(v) != len(y):
        raise InputError("features, labels and weights must agree in length")
    if not np.all(np.isfinite(x)):
        raise InputError("features contain non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InputError("labels must be +1 or -1")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise InputError("weights must be finite and non-negative")
    return x, y, v


def fit_weighted_svm(features, labels, weights=None, C=1.0, tol=TOL, max_epochs=MAX_EPOCHS):
    """Fit ``w, b`` of the weighted soft-margin SVM (no calibration)."""
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    x, y, v = _check_inputs(features, labels, weights)
    cost = C * v
    for cls in (1.0, -1.0):
        if not np.any(cost[y == cls] > 0):
            raise DegenerateClassError(f"class {int(cls):+d} has no positively weighted samples")
    active = cost > 0
    xa = np.ascontiguousarray(x[active])
    ya = y[active].astype(np.int64)
    ca = cost[active]
    alpha, n_iter = _smo(xa, ya, ca, tol, max_epochs * len(xa))
    w = (alpha * ya) @ xa
    b = _best_bias(x[active] @ w, y[active], ca)
    return DecoderModel(w=w, b=float(b), C=float(C), n_iter=int(n_iter))


def svm_objective(model, features, labels, weights=None, C=None):
    x, y, v = _check_inputs(features, labels, weights)
    c = model.C if C is None else C
    hinge = np.maximum(0.0, 1.0 - y * (x @ model.w + model.b))
    return 0.5 * float(model.w @ model.w) + c * float(v @ hinge)


def decision_value(model, x):
    """``w.x + b``; accepts one sample or a ``(n, d)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(model.w):
        raise InputError(f"expected {len(model.w)} features, got {x.shape[-1]}")
    return x @ model.w + model.b


def per_sample_hinge_loss(model, x, y):
    return np.maximum(0.0, 1.0 - np.asarray(y, dtype=float) * decision_value(model, x))


def hard_label(decision):
    """Tie rule: a decision of exactly 0 is Left."""
    return np.where(np.asarray(decision) >= 0, 1, -1)


def posterior_left(model, decision):
    z = model.calib_a * np.asarray(decision, dtype=float) + model.calib_b
    # numerically stable 1 / (1 + exp(z))
    return np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))),
                    1.0 / (1.0 + np.exp(-np.abs(z))))


def predict(model, x):
    f = float(decision_value(model, x))
    return Prediction(decision=f, label=Label(int(hard_label(f))), p_left=float(posterior_left(model, f)))


def _platt(decisions, targets_pos, a_bound, max_iter=100):
    """Newton fit of ``p = 1 / (1 + exp(A f + B))`` with smoothed targets.

    ``targets_pos`` marks Left samples. Follows the safeguarded Newton method
    usually paired with Platt scaling (line search, minimum step 1e-10).
    """
    f = np.asarray(decisions, dtype=float)
    pos = np.asarray(targets_pos, dtype=bool)
    n_pos = pos.sum()
    n_neg = len(pos) - n_pos
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))

    def nll(a_, b_):
        z = a_ * f + b_
        # -sum t log p + (1-t) log(1-p), p = 1/(1+e^z)
        return float(np.sum(t * np.logaddexp(0, z) + (1 - t) * np.logaddexp(0, -z)))

    fval = nll(a, b)
    sigma = 1e-12
    for _ in range(max_iter):
        z = a * f + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = nll(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2
        else:
            break
    if a > 0:
        # decision anti-correlated with Left: fall back to the prior
        a = 0.0
        b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    elif a < -a_bound:
        a = -a_bound
        b = _refit_intercept(f, t, a)
    return a, b


def _refit_intercept(f, t, a):
    b = 0.0
    for _ in range(100):
        z = a * f + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))
        g = np.sum(t - p)
        h = np.sum(p * (1 - p)) + 1e-12
        b -= g / h
        if abs(g) < 1e-10:
            break
    return float(b)


def calibrate_posterior(model, features, labels, a_bound=CALIB_A_BOUND):
    """Return ``model`` with Platt sigmoid parameters fitted on its decisions."""
    y = np.asarray(labels)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise DegenerateClassError("calibration needs both classes")
    f = decision_value(model, np.asarray(features, dtype=float))
    a, b = _platt(f, y == 1, a_bound)
    return replace(model, calib_a=float(a), calib_b=float(b))
