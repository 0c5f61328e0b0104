"""Evaluation: accuracy, stealing/defense predicates, KL to a reference, peaks."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .logits import DEFAULT_PEAK_RHO, count_peaks, kl_divergence, soften
from .nn import forward


@dataclass(frozen=True)
class AccuracyScore:
    correct: int
    total: int

    def __post_init__(self):
        if self.total <= 0:
            raise ConfigError("accuracy needs at least one sample")

    @property
    def value(self):
        return self.correct / self.total


@dataclass(frozen=True)
class ModelComparison:
    mean_kl: float | None = None
    mean_peaks: float | None = None
    per_sample_kl: np.ndarray | None = None
    per_sample_peaks: np.ndarray | None = None


def _value(score):
    return score.value if isinstance(score, AccuracyScore) else float(score)


def predictions(model, data):
    if model.layer_dims[0] != data.dim:
        raise ShapeError(f"model input dim {model.layer_dims[0]} != data dim {data.dim}")
    return np.argmax(forward(model, data.inputs), axis=1)


def accuracy(model, data):
    """Top-1 accuracy; argmax ties go to the lowest class index."""
    correct = int(np.sum(predictions(model, data) == data.labels))
    return AccuracyScore(correct, len(data))


def stealing_occurred(acc_with, acc_without):
    """True iff distilling from the victim strictly beats training alone."""
    return _value(acc_with) > _value(acc_without)


def defense_effective(acc_with_defense, acc_without_defense):
    """True iff the defended teacher strictly lowers the stealer's accuracy."""
    return _value(acc_with_defense) < _value(acc_without_defense)


def kl_from_logits(z, z_ref, tau=1.0):
    """Per-sample KL(soften(z, tau) || soften(z_ref, tau))."""
    z, z_ref = np.asarray(z), np.asarray(z_ref)
    if z.shape != z_ref.shape:
        raise ShapeError(f"logit shapes differ: {z.shape} vs {z_ref.shape}")
    return kl_divergence(soften(z, tau), soften(z_ref, tau))


def kl_to_reference(model, reference, data, tau=1.0, per_sample=False):
    """Mean over ``data`` of KL(model || reference) on softened outputs."""
    if model.n_classes != reference.n_classes:
        raise ShapeError("models disagree on the class count")
    kl = kl_from_logits(forward(model, data.inputs), forward(reference, data.inputs), tau)
    return ModelComparison(mean_kl=float(kl.mean()), per_sample_kl=kl) if per_sample else float(kl.mean())


def peak_profile_from_logits(z, rho=DEFAULT_PEAK_RHO):
    peaks = count_peaks(soften(z, 1.0), rho)
    return ModelComparison(mean_peaks=float(peaks.mean()), per_sample_peaks=peaks)


def peak_profile(model, data, rho=DEFAULT_PEAK_RHO):
    """Mean number of peaks of ``soften(model(x), 1)`` over the dataset."""
    return peak_profile_from_logits(forward(model, data.inputs), rho)
