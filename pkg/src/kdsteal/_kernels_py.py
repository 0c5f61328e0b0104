"""Pure numpy implementation of the fused objective kernels.

Mirrors ``_kernels.pyx`` function for function. Both return the batch-mean loss
and the gradient of that mean with respect to the student logits.
"""

import numpy as np


def _log_softmax(z, tau):
    z = z / tau
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_softmax_rows(z, tau=1.0):
    return _log_softmax(np.asarray(z, dtype=np.float64), tau)


def distill_objective(z, labels, hard_weight, targets, soft_weight, tau):
    """hard * CE(onehot, softmax(z)) + soft * KL(targets || softmax(z / tau))."""
    n = z.shape[0]
    loss = 0.0
    grad = np.zeros_like(z)
    if hard_weight != 0.0:
        logs = _log_softmax(z, 1.0)
        rows = np.arange(n)
        loss += hard_weight * -logs[rows, labels].sum()
        g = np.exp(logs)
        g[rows, labels] -= 1.0
        grad += hard_weight * g
    if soft_weight != 0.0:
        logp = _log_softmax(z, tau)
        pos = targets > 0
        tlogt = np.where(pos, targets * np.log(np.where(pos, targets, 1.0)), 0.0)
        loss += soft_weight * (tlogt - targets * logp).sum()
        grad += (soft_weight / tau) * (np.exp(logp) - targets)
    return loss / n, grad / n


def contrast_objective(z, labels, ref_logq, weight, tau, reverse):
    """CE(onehot, softmax(z)) - weight * KL between softmax(z / tau) and the reference.

    ``reverse=False`` uses KL(current || reference); ``reverse=True`` uses
    KL(reference || current). ``ref_logq`` holds reference log-probabilities
    already softened at ``tau``.
    """
    n = z.shape[0]
    rows = np.arange(n)
    logs = _log_softmax(z, 1.0)
    loss = -logs[rows, labels].sum()
    grad = np.exp(logs)
    grad[rows, labels] -= 1.0
    if weight != 0.0:
        logp = _log_softmax(z, tau)
        p = np.exp(logp)
        if reverse:
            q = np.exp(ref_logq)
            kl = (q * (ref_logq - logp)).sum()
            gkl = (p - q) / tau
        else:
            gap = logp - ref_logq
            kl = (p * gap).sum()
            gkl = p * (gap - (p * gap).sum(axis=1, keepdims=True)) / tau
        loss -= weight * kl
        grad -= weight * gkl
    return loss / n, grad / n
