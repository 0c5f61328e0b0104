"""Logit and probability algebra.

Every function works on a single vector of class scores (shape ``(C,)``) or on a
batch (shape ``(B, C)``); reductions run over the last axis. All logs are
natural logs, so divergences and entropies are in nats.
"""

import numpy as np

from .errors import DomainError, ShapeError

PROB_FLOOR = 1e-12
DEFAULT_PEAK_RHO = 0.1


def _check_tau(tau):
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")


def _same_shape(p, q):
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")


def log_soften(z, tau=1.0):
    """Log of :func:`soften`, computed without forming the probabilities."""
    _check_tau(tau)
    z = np.asarray(z, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def soften(z, tau=1.0):
    """Temperature-scaled softmax, ``exp(z/tau)`` normalized over classes."""
    _check_tau(tau)
    z = np.asarray(z, dtype=np.float64) / tau
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(target, n_classes):
    target = np.asarray(target)
    out = np.zeros(target.shape + (n_classes,))
    np.put_along_axis(out, target[..., None], 1.0, axis=-1)
    return out


def compose_htc(y_nasty, target, alpha):
    """Mix softened teacher outputs with the one-hot target.

    Returns ``(1 - alpha) * onehot(target) + alpha * y_nasty``. The target class
    always keeps at least ``1 - alpha`` of the mass.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    y_nasty = np.asarray(y_nasty, dtype=np.float64)
    n_classes = y_nasty.shape[-1]
    target = np.asarray(target)
    if np.any(target < 0) or np.any(target >= n_classes):
        raise DomainError(f"target index out of range for {n_classes} classes")
    return (1.0 - alpha) * one_hot(target, n_classes) + alpha * y_nasty


def ensemble_logits(members, space="logit", tau=1.0):
    """Combine the outputs of several models into one logit vector.

    ``space="logit"`` takes the per-class arithmetic mean of the member logits.
    ``space="prob"`` averages the softened distributions instead and returns
    their log (so that ``soften(result, tau)`` gives the averaged distribution).
    """
    members = [np.asarray(m, dtype=np.float64) for m in members]
    if not members:
        raise ShapeError("ensemble needs at least one member")
    shape = members[0].shape
    for m in members[1:]:
        if m.shape != shape:
            raise ShapeError(f"ensemble members disagree in shape: {shape} vs {m.shape}")
    if space == "logit":
        # shifted mean: exact when all members agree
        base = members[0]
        total = np.zeros(shape)
        for m in members[1:]:
            total += m - base
        return base + total / len(members)
    if space == "prob":
        mean = sum(soften(m, tau) for m in members) / len(members)
        return tau * np.log(np.maximum(mean, PROB_FLOOR))
    raise DomainError(f"unknown ensemble space {space!r}")


def _xlogy(p, q):
    # 0 * log(anything) = 0
    return np.where(p > 0, p * np.log(np.where(p > 0, q, 1.0)), 0.0)


def kl_divergence(p, q):
    """``sum_i p_i * log(p_i / q_i)``; ``q`` is floored at 1e-12 before the log."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _same_shape(p, q)
    q = np.maximum(q, PROB_FLOOR)
    kl = (_xlogy(p, p) - _xlogy(p, q)).sum(axis=-1)
    return np.maximum(kl, 0.0)


def cross_entropy(p_target, s):
    """``-sum_i p_i * log(s_i)`` with ``s`` floored at 1e-12."""
    p = np.asarray(p_target, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _same_shape(p, s)
    return -_xlogy(p, np.maximum(s, PROB_FLOOR)).sum(axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return -_xlogy(p, p).sum(axis=-1)


def count_peaks(p, rho=DEFAULT_PEAK_RHO):
    """Number of classes whose probability is at least ``rho`` times the maximum."""
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"peak threshold must lie in (0, 1], got {rho}")
    p = np.asarray(p, dtype=np.float64)
    return (p >= rho * p.max(axis=-1, keepdims=True)).sum(axis=-1)
