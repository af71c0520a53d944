"""Weighted common spatial patterns.

Per-trial covariances are trace-normalised, averaged within each class with
class-normalised sample weights, and the resulting pair is jointly
diagonalised by whitening the composite covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateClassError, DegenerateInputError, InputError, ParameterError, RankError

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpatialFilterBank:
    """Fitted filters, ``2 * n_pairs`` rows over channels.

    Rows are ordered by descending eigenvalue: the ``n_pairs`` largest first,
    then the ``n_pairs`` smallest.
    """

    filters: np.ndarray
    eigenvalues: np.ndarray
    n_pairs: int
    patterns: np.ndarray = None

    @property
    def n_channels(self):
        return self.filters.shape[1]

    def to_dict(self):
        return {
            "filters": self.filters.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "n_pairs": self.n_pairs,
            "patterns": None if self.patterns is None else self.patterns.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        patterns = d.get("patterns")
        return cls(
            filters=np.asarray(d["filters"], dtype=float),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            n_pairs=int(d["n_pairs"]),
            patterns=None if patterns is None else np.asarray(patterns, dtype=float),
        )


def _as_matrix(x):
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def trial_covariance(epoch):
    """``X X^T / trace(X X^T)`` for one trial."""
    x = _as_matrix(epoch)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InputError("trial covariance needs a 2-D matrix with >= 2 samples")
    r = x @ x.T
    tr = np.trace(r)
    if not tr > 0:
        raise DegenerateInputError("zero-signal trial: covariance trace is 0")
    r = r / tr
    return (r + r.T) / 2


def trial_covariances(data):
    """Vectorised :func:`trial_covariance` over a ``(trials, channels, samples)`` stack."""
    x = np.asarray(data, dtype=np.float64)
    r = np.einsum("nct,ndt->ncd", x, x)
    tr = np.trace(r, axis1=1, axis2=2)
    if np.any(tr <= 0):
        raise DegenerateInputError(f"zero-signal trial at index {int(np.argmin(tr))}")
    return r / tr[:, None, None]


def _class_weights(weights, mask, which):
    w = weights[mask]
    total = w.sum()
    if not total > 0:
        raise DegenerateClassError(f"class {which} has no positively weighted trials")
    return w / total


def weighted_composite_covariance(covs, weights, labels):
    """Class-wise weighted mean covariances ``(R1, R2)``.

    ``labels`` are +1 (class 1, Left) / -1 (class 2, Right). Weights are
    normalised to sum to one inside each class.
    """
    covs = np.asarray(covs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    if not (len(covs) == len(weights) == len(labels)):
        raise InputError("covs, weights and labels must have equal length")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InputError("weights must be finite and non-negative")
    out = []
    for cls in (1, -1):
        mask = labels == cls
        w = _class_weights(weights, mask, cls)
        r = np.einsum("n,ncd->cd", w, covs[mask])
        out.append((r + r.T) / 2)
    return tuple(out)


def _sign_fix(rows):
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), idx])
    signs[signs == 0] = 1
    return rows * signs[:, None]


def fit_csp_from_covariances(covs, weights, labels, n_pairs=3):
    """Weighted CSP on precomputed trace-normalised covariances."""
    covs = np.asarray(covs, dtype=np.float64)
    n_channels = covs.shape[-1]
    if n_pairs < 1 or 2 * n_pairs > n_channels:
        raise ParameterError(f"need 1 <= n_pairs and 2*n_pairs <= {n_channels}, got {n_pairs}")
    r1, r2 = weighted_composite_covariance(covs, weights, labels)
    return _joint_diagonalise(r1, r2, n_pairs)


def _joint_diagonalise(r1, r2, n_pairs):
    composite = r1 + r2
    d, u = np.linalg.eigh(composite)
    keep = d > RANK_TOL * d.max()
    if keep.sum() < 2 * n_pairs:
        raise RankError(
            f"composite covariance keeps {int(keep.sum())} dimensions, need {2 * n_pairs}"
        )
    whiten = (u[:, keep] / np.sqrt(d[keep])).T
    s1 = whiten @ r1 @ whiten.T
    lam, b = np.linalg.eigh((s1 + s1.T) / 2)
    order = np.argsort(lam)[::-1]
    pick = np.concatenate([order[:n_pairs], order[-n_pairs:]])
    filters = _sign_fix(b[:, pick].T @ whiten)
    eig = lam[pick]
    # forward model (activation patterns) for each retained filter
    patterns = composite @ filters.T @ np.linalg.inv(filters @ composite @ filters.T)
    return SpatialFilterBank(filters=filters, eigenvalues=eig, n_pairs=n_pairs, patterns=patterns)


def fit_weighted_csp(epochs, weights, labels, n_pairs=3):
    """Fit weighted CSP on epochs (objects with ``.data`` or raw matrices)."""
    data = np.stack([_as_matrix(e) for e in epochs])
    return fit_csp_from_covariances(trial_covariances(data), weights, labels, n_pairs)


def sample_covariances(data):
    """Mean-removed covariance of each ``(channels, samples)`` slice, ``ddof=0``."""
    x = np.asarray(data, dtype=np.float64)
    x = x - x.mean(axis=-1, keepdims=True)
    return np.einsum("nct,ndt->ncd", x, x) / x.shape[-1]


def _log_ratio(var):
    if np.any(~np.isfinite(var)):
        raise InputError("non-finite projected variance")
    total = var.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateInputError("projected variance is zero in every filter")
    var = np.maximum(var, np.finfo(float).tiny * total)
    return np.log(var / total)


def extract_features(bank, slice_data):
    """Normalised log-variance feature for every filter of ``bank``."""
    x = _as_matrix(slice_data)
    if x.shape[0] != bank.n_channels:
        raise InputError(f"slice has {x.shape[0]} channels, filters expect {bank.n_channels}")
    proj = bank.filters @ x
    return _log_ratio(proj.var(axis=1))


def features_from_covariances(bank, covs):
    """Vectorised :func:`extract_features` given :func:`sample_covariances` output."""
    covs = np.asarray(covs, dtype=np.float64)
    var = np.einsum("kc,ncd,kd->nk", bank.filters, covs, bank.filters)
    return _log_ratio(var)


def subspace_angles(a, b):
    """Principal angles (radians) between the row spaces of ``a`` and ``b``."""
    return linalg.subspace_angles(np.asarray(a, dtype=float).T, np.asarray(b, dtype=float).T)
