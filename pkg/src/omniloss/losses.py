"""Forward and backward evaluation of the conditional-GAN losses.

Every loss returns a :class:`LossResult` holding the scalar value and the
exact gradient with respect to its score input. Scores are float64 arrays.
A 1-D score array is a single sample; a 2-D array of shape
``(n_samples, n_scores)`` is a batch, reduced by the mean (so the returned
gradient carries the ``1 / n_samples`` factor).

Log-sum-exp terms are shifted by their maximum exponent, so scores of
magnitude 1e4 and beyond evaluate without overflow.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError, ShapeError

__all__ = [
    "LossResult",
    "UnifiedLossResult",
    "logsumexp",
    "omni_loss",
    "omni_loss_rows",
    "unified_loss",
    "omni_from_unified_identity",
    "multi_hinge_loss",
    "softmax_ce_loss",
    "hinge_gan_loss",
    "perpixel_omni_loss",
]

HINGE_ROLES = ("d_real", "d_fake", "g")


@dataclass(frozen=True)
class LossResult:
    """Scalar loss value and its gradient with respect to the scores."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class UnifiedLossResult:
    value: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray


def _as_scores(s, name="scores"):
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise InputError(f"{name} contain NaN or Inf")
    return s


def _as_target(y, shape):
    y = np.asarray(y)
    if y.shape != shape:
        raise ShapeError(f"target shape {y.shape} does not match scores {shape}")
    if not np.all((y == -1) | (y == 0) | (y == 1)):
        raise InputError("target entries must be -1, 0 or +1")
    return y


def logsumexp(x, axis=-1):
    """``log(sum(exp(x)))`` along ``axis``, shifted by the maximum.

    Entries equal to ``-inf`` contribute nothing; an all ``-inf`` slice
    returns ``-inf``.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _log1p_sum_exp(a):
    """Row-wise ``log(1 + sum_i exp(a_i))`` and its gradient ``da``.

    Masked entries are ``-inf`` and get exactly zero gradient.
    """
    shift = np.maximum(np.max(a, axis=-1, keepdims=True), 0.0)
    e = np.exp(a - shift)
    denom = np.exp(-shift) + np.sum(e, axis=-1, keepdims=True)
    value = np.log(denom) + shift
    return value[..., 0], e / denom


def omni_loss_rows(S, Y):
    """Per-row omni-loss values and gradients without batch reduction.

    Parameters
    ----------
    S : ndarray, shape (..., n)
        Raw scores.
    Y : ndarray, shape (..., n)
        Labels in {-1, 0, +1}; 0 entries are ignored.

    Returns
    -------
    values : ndarray, shape (...)
    grads : ndarray, shape (..., n)
    """
    S = _as_scores(S)
    Y = _as_target(Y, S.shape)
    neg_value, neg_w = _log1p_sum_exp(np.where(Y == -1, S, -np.inf))
    pos_value, pos_w = _log1p_sum_exp(np.where(Y == 1, -S, -np.inf))
    return neg_value + pos_value, neg_w - pos_w


def _reduce(values, grads):
    if np.ndim(values) == 0:
        return LossResult(float(values), grads)
    n = values.size
    return LossResult(float(np.mean(values)), grads / n)


def omni_loss(s, y):
    """Multi-label omni-loss.

    ``log(1 + sum_{y_i=-1} exp(s_i)) + log(1 + sum_{y_j=+1} exp(-s_j))``.
    Minimizing it pushes negative-labelled scores below zero and
    positive-labelled scores above zero; zero-labelled scores are ignored
    and receive a gradient of exactly zero.

    Parameters
    ----------
    s : array_like, shape (n,) or (n_samples, n)
    y : array_like, same shape as ``s``

    Returns
    -------
    LossResult
        Batch inputs are averaged over samples.
    """
    values, grads = omni_loss_rows(s, y)
    return _reduce(values, grads)


def unified_loss(s_pos, s_neg, gamma=1.0, m=0.0):
    """Pairwise unified loss ``log[1 + sum_n sum_p exp(gamma (s_n - s_p + m))]``."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    s_pos = _as_scores(np.atleast_1d(s_pos), "positive scores").ravel()
    s_neg = _as_scores(np.atleast_1d(s_neg), "negative scores").ravel()
    if s_pos.size == 0 or s_neg.size == 0:
        return UnifiedLossResult(0.0, np.zeros_like(s_pos), np.zeros_like(s_neg))
    pairs = gamma * (s_neg[:, None] - s_pos[None, :] + m)
    value, w = _log1p_sum_exp(pairs.reshape(1, -1))
    w = w.reshape(pairs.shape)
    return UnifiedLossResult(
        float(value[0]), -gamma * w.sum(axis=0), gamma * w.sum(axis=1)
    )


def omni_from_unified_identity(s, y):
    """Evaluate the omni-loss two ways: as two unified losses, and directly.

    The unified loss with ``gamma=1, m=0`` and a single zero-valued positive
    score reduces to the negative term of the omni-loss; with a single
    zero-valued negative score it reduces to the positive term.

    Returns
    -------
    (float, float)
        ``(unified({0}, negatives) + unified(positives, {0}), omni_loss)``.
    """
    s = _as_scores(s).ravel()
    y = _as_target(np.ravel(y), s.shape)
    zero = np.zeros(1)
    via_unified = (
        unified_loss(zero, s[y == -1], 1.0, 0.0).value
        + unified_loss(s[y == 1], zero, 1.0, 0.0).value
    )
    return via_unified, omni_loss(s, y).value


def _as_class_index(t, n_rows, n_cols):
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise InputError("target class must be an integer index")
    if t.shape != (n_rows,) and t.shape != ():
        raise ShapeError(f"expected {n_rows} target classes, got shape {t.shape}")
    if np.any(t < 0) or np.any(t >= n_cols):
        raise InputError(f"target class out of range [0, {n_cols})")
    return np.broadcast_to(t, (n_rows,))


def _rows(logits):
    logits = _as_scores(logits, "logits")
    single = logits.ndim == 1
    return np.atleast_2d(logits), single


def multi_hinge_loss(logits, target_class):
    """Multi-class hinge loss ``sum_{k != t} max(0, 1 + l_k - l_t)``.

    The subgradient of ``max(0, .)`` at exactly zero is taken to be zero.
    """
    L, single = _rows(logits)
    n, k = L.shape
    t = _as_class_index(target_class, n, k)
    rows = np.arange(n)
    margins = 1.0 + L - L[rows, t][:, None]
    margins[rows, t] = 0.0
    active = margins > 0
    values = np.sum(np.where(active, margins, 0.0), axis=1)
    grads = active.astype(np.float64)
    grads[rows, t] = -np.sum(active, axis=1)
    if single:
        return LossResult(float(values[0]), grads[0])
    return _reduce(values, grads)


def softmax_ce_loss(logits, target_class):
    """Softmax cross-entropy ``-log softmax(logits)[t]``; grad ``softmax - onehot``."""
    L, single = _rows(logits)
    n, k = L.shape
    t = _as_class_index(target_class, n, k)
    rows = np.arange(n)
    lse = logsumexp(L, axis=1)
    values = lse - L[rows, t]
    grads = np.exp(L - lse[:, None])
    grads[rows, t] -= 1.0
    if single:
        return LossResult(float(values[0]), grads[0])
    return _reduce(values, grads)


def hinge_gan_loss(score, role):
    """Hinge adversarial term.

    ``d_real``: ``max(0, 1 - score)``; ``d_fake``: ``max(0, 1 + score)``;
    ``g``: ``-score``. Array input is averaged.
    """
    score = _as_scores(score, "score")
    if role == "d_real":
        margin = 1.0 - score
        values = np.maximum(margin, 0.0)
        grads = np.where(margin > 0, -1.0, 0.0)
    elif role == "d_fake":
        margin = 1.0 + score
        values = np.maximum(margin, 0.0)
        grads = np.where(margin > 0, 1.0, 0.0)
    elif role == "g":
        values = -score
        grads = -np.ones_like(score)
    else:
        raise ParameterError(f"role must be one of {HINGE_ROLES}, got {role!r}")
    if score.ndim == 0:
        return LossResult(float(values), np.asarray(grads, dtype=np.float64))
    return _reduce(values, grads)


def perpixel_omni_loss(score_map, target_map):
    """Omni-loss applied at every spatial location, averaged over locations.

    Parameters
    ----------
    score_map : ndarray, shape (K, H, W) or (N, K, H, W)
        ``K = C + 2`` score channels.
    target_map : ndarray, same shape
        Per-location labels in {-1, 0, +1}.

    Returns
    -------
    LossResult
        ``grad`` has the shape of ``score_map``.
    """
    S = _as_scores(score_map, "score map")
    if S.ndim not in (3, 4):
        raise ShapeError(f"score map must be 3-D or 4-D, got {S.ndim}-D")
    Y = _as_target(target_map, S.shape)
    S_last = np.moveaxis(S, -3, -1)
    values, grads = omni_loss_rows(S_last, np.moveaxis(Y, -3, -1))
    return LossResult(float(np.mean(values)), np.moveaxis(grads, -1, -3) / values.size)
