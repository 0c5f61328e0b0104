"""Training objectives and procedures: vanilla, KD, nasty teachers, HTC, SCM.

Every loss is available as ``*_loss`` (value only) and ``*_loss_and_grad``
(value plus gradient with respect to the student logits). Single vectors and
batches are both accepted; batch values are means over samples.

KL terms that distill a teacher always run from teacher to student,
``KL(teacher || student)``.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from . import kernels
from .data import LabeledDataset, subset_data  # noqa: F401  (re-exported)
from .errors import ConfigError, DomainError, ShapeError
from .logits import ensemble_logits, log_soften, soften
from .nn import OptimizerState, derive_rng, forward, init_mlp, loss_gradients, step

log = logging.getLogger(__name__)

# Hyperparameter grids searched for HTC and SCM.
M_GRID = (1, 5, 10, 50)
TAU_GRID = (4, 20, 50, 100)
ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")


def _check_positive(name, value):
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value}")


@dataclass
class KdConfig:
    alpha: float = 0.9
    tau: float = 4.0
    lam: float | None = None  # None means tau**2

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_positive("tau", self.tau)
        if self.lam is not None:
            _check_positive("lambda", self.lam)

    @property
    def weight(self):
        return self.tau ** 2 if self.lam is None else self.lam


@dataclass
class NastyConfig:
    """Contrastive teacher objective.

    ``kl_scale`` defaults to ``tau_a**2``. ``reverse_kl`` switches the
    adversarial term from KL(current || reference) to KL(reference || current).
    """

    omega: float = 0.04
    tau_a: float = 4.0
    kl_scale: float | None = None
    reverse_kl: bool = False

    def __post_init__(self):
        if self.omega < 0:
            raise DomainError(f"omega must be >= 0, got {self.omega}")
        _check_positive("tau_a", self.tau_a)

    @property
    def weight(self):
        scale = self.tau_a ** 2 if self.kl_scale is None else self.kl_scale
        return self.omega * scale


@dataclass
class HtcConfig:
    alpha: float = 0.9
    tau: float = 50.0
    m: float = 10.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_positive("tau", self.tau)
        _check_positive("m", self.m)


@dataclass
class ChainSpec:
    """Sequence of contrastive models ``S^1..S^k``.

    ``S^1`` is the given nasty teacher. ``steps[i]`` configures the objective
    for ``S^{i+2}``; a single entry is reused for every step. ``dims[i]`` may
    override the architecture of ``S^{i+2}`` (None keeps the previous one).
    """

    k: int = 3
    steps: list = field(default_factory=lambda: [NastyConfig()])
    dims: list = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"chain length must be >= 1, got {self.k}")
        if not self.steps:
            raise ConfigError("chain needs at least one step config")

    def step_config(self, i):
        return self.steps[min(i, len(self.steps) - 1)]

    def step_dims(self, i, default):
        if i < len(self.dims) and self.dims[i] is not None:
            return tuple(self.dims[i])
        return tuple(default)


@dataclass
class TrainBudget:
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    early_stop_acc: float | None = None
    keep_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.early_stop_acc is not None and not 0.0 < self.early_stop_acc <= 1.0:
            raise ConfigError("early_stop_acc must lie in (0, 1]")

    def make_optimizer(self):
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate,
                              momentum=self.momentum, weight_decay=self.weight_decay)

    def reseeded(self, *keys):
        seed = int(derive_rng(self.seed, *keys).integers(2 ** 63))
        return replace(self, seed=seed)


# ---------------------------------------------------------------- losses

def _batch(z, label):
    z = np.asarray(z, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[0] != labels.shape[0]:
        raise ShapeError(f"{z.shape[0]} logit rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise DomainError("label index out of range")
    return z, labels


def _match(z, other):
    other = np.asarray(other, dtype=np.float64)
    if other.ndim == 1:
        other = other[None, :]
    if other.shape != z.shape:
        raise ShapeError(f"logit shapes differ: {z.shape} vs {other.shape}")
    return other


def ce_loss_and_grad(z, label):
    z, labels = _batch(z, label)
    return kernels.distill_objective(z, labels, 1.0, None, 0.0, 1.0)


def kd_loss_and_grad(z_s, z_t, label, cfg):
    """alpha*lambda*KL(soften(z_t,tau) || soften(z_s,tau)) + (1-alpha)*CE(onehot, soften(z_s,1))."""
    z_s, labels = _batch(z_s, label)
    targets = soften(_match(z_s, z_t), cfg.tau)
    return kernels.distill_objective(z_s, labels, 1.0 - cfg.alpha, targets,
                                     cfg.alpha * cfg.weight, cfg.tau)


def htc_loss_and_grad(z_s, z_nasty, label, cfg):
    """(1-alpha)*CE(onehot, s) + alpha*m*KL(soften(z_nasty,tau) || s) with s = soften(z_s, 1)."""
    z_s, labels = _batch(z_s, label)
    targets = soften(_match(z_s, z_nasty), cfg.tau)
    return kernels.distill_objective(z_s, labels, 1.0 - cfg.alpha, targets,
                                     cfg.alpha * cfg.m, 1.0)


def scm_loss_and_grad(z_s, z_ens, label, cfg):
    """(1-alpha)*CE(onehot, soften(z_s,1)) + alpha*m*KL(soften(z_ens,tau) || soften(z_s,tau))."""
    z_s, labels = _batch(z_s, label)
    targets = soften(_match(z_s, z_ens), cfg.tau)
    return kernels.distill_objective(z_s, labels, 1.0 - cfg.alpha, targets,
                                     cfg.alpha * cfg.m, cfg.tau)


def nasty_loss_and_grad(z, z_ref, label, cfg):
    """CE(onehot, soften(z,1)) - omega*scale*KL(soften(z,tau_a) || soften(z_ref,tau_a))."""
    z, labels = _batch(z, label)
    ref_logq = log_soften(_match(z, z_ref), cfg.tau_a)
    return kernels.contrast_objective(z, labels, ref_logq, cfg.weight, cfg.tau_a,
                                      cfg.reverse_kl)


def ce_loss(z, label):
    return ce_loss_and_grad(z, label)[0]


def kd_loss(z_s, z_t, label, cfg):
    return kd_loss_and_grad(z_s, z_t, label, cfg)[0]


def htc_loss(z_s, z_nasty, label, cfg):
    return htc_loss_and_grad(z_s, z_nasty, label, cfg)[0]


def scm_loss(z_s, z_ens, label, cfg):
    return scm_loss_and_grad(z_s, z_ens, label, cfg)[0]


def nasty_loss(z, z_ref, label, cfg):
    return nasty_loss_and_grad(z, z_ref, label, cfg)[0]


# ---------------------------------------------------------------- training loop

def _accuracy(model, data):
    return float(np.mean(np.argmax(forward(model, data.inputs), axis=1) == data.labels))


@dataclass
class FitResult:
    model: object          # model after the last epoch run
    best_model: object     # best eval-accuracy checkpoint (or final if no eval data)
    best_acc: float | None
    best_epoch: int
    opt: OptimizerState
    history: list
    stopped_early: bool = False

    @property
    def selected(self):
        """Early-stopped runs hand back the stopping point; others the best checkpoint."""
        return self.model if self.stopped_early else self.best_model


def fit(model, data, objective, budget, *, eval_data=None, opt_state=None,
        start_epoch=0, history=None):
    """Minibatch training of ``model`` in place.

    ``objective(logits, batch_index)`` returns ``(loss, dloss/dlogits)``.
    Batches follow a fresh permutation per epoch drawn from
    ``(budget.seed, "shuffle", epoch)``, so a run resumed at ``start_epoch``
    with the saved optimizer state replays the uninterrupted trajectory.

    With ``budget.early_stop_acc`` set, training halts after the first epoch
    whose eval accuracy reaches the target from the side it started on
    (falling to it from above, or rising to it from below).
    """
    if model.layer_dims[0] != data.dim or model.n_classes != data.n_classes:
        raise ShapeError(f"model dims {model.layer_dims} do not fit data "
                         f"(dim {data.dim}, {data.n_classes} classes)")
    opt = opt_state if opt_state is not None else budget.make_optimizer()
    history = [] if history is None else history
    n, bs = len(data), budget.batch_size
    target = budget.early_stop_acc
    from_above = None
    if target is not None and eval_data is not None:
        from_above = _accuracy(model, eval_data) > target
    best_acc, best_model, best_epoch = None, model.copy(), start_epoch - 1
    stopped = False
    for epoch in range(start_epoch, budget.epochs):
        order = derive_rng(budget.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            value, grads = loss_gradients(model, data.inputs[idx],
                                          lambda z, idx=idx: objective(z, idx))
            step(model, grads, opt)
            total += value * len(idx)
        record = {"epoch": epoch, "loss": total / n}
        if eval_data is not None:
            acc = _accuracy(model, eval_data)
            record["eval_acc"] = acc
            if not budget.keep_best or best_acc is None or acc > best_acc:
                best_acc, best_model, best_epoch = acc, model.copy(), epoch
            if from_above is not None and (acc <= target if from_above else acc >= target):
                stopped = True
        history.append(record)
        if stopped:
            break
    if eval_data is None:
        best_model, best_epoch = model.copy(), budget.epochs - 1
    return FitResult(model, best_model, best_acc, best_epoch, opt, history, stopped)


def _fresh(dims, data, budget, activation):
    dims = tuple(dims)
    if dims[-1] != data.n_classes:
        raise ConfigError(f"last layer dim {dims[-1]} != {data.n_classes} classes")
    return init_mlp(dims, activation, budget.seed)


def _frozen_logits(model, data):
    if model.n_classes != data.n_classes:
        raise ShapeError(f"teacher emits {model.n_classes} classes, data has {data.n_classes}")
    return forward(model, data.inputs)


def _run(dims, data, budget, objective, eval_data, history, activation):
    model = _fresh(dims, data, budget, activation)
    return fit(model, data, objective, budget, eval_data=eval_data, history=history).selected


def train_vanilla(dims, data, budget, *, eval_data=None, history=None, activation="relu"):
    """Plain cross-entropy training."""
    def objective(z, idx):
        return kernels.distill_objective(z, data.labels[idx], 1.0, None, 0.0, 1.0)
    return _run(dims, data, budget, objective, eval_data, history, activation)


def train_kd(dims, teacher, data, cfg, budget, *, eval_data=None, history=None,
             activation="relu"):
    """Distill a frozen teacher into a fresh student with the KD loss."""
    targets = soften(_frozen_logits(teacher, data), cfg.tau)
    hard, soft = 1.0 - cfg.alpha, cfg.alpha * cfg.weight

    def objective(z, idx):
        return kernels.distill_objective(z, data.labels[idx], hard, targets[idx], soft, cfg.tau)
    return _run(dims, data, budget, objective, eval_data, history, activation)


def train_nasty(dims, reference, data, cfg, budget, *, eval_data=None, history=None,
                activation="relu", init="scratch"):
    """Train a model that stays accurate while diverging from ``reference``.

    ``init="scratch"`` starts from a fresh random network; ``init="reference"``
    warm-starts from a copy of the reference (architectures must agree).
    """
    ref_logq = log_soften(_frozen_logits(reference, data), cfg.tau_a)
    weight = cfg.weight

    def objective(z, idx):
        return kernels.contrast_objective(z, data.labels[idx], ref_logq[idx], weight,
                                          cfg.tau_a, cfg.reverse_kl)
    if init == "reference":
        if tuple(dims) != tuple(reference.layer_dims):
            raise ConfigError("warm start needs matching architectures")
        model = reference.copy()
    elif init == "scratch":
        model = _fresh(dims, data, budget, activation)
    else:
        raise ConfigError(f"unknown init {init!r}")
    return fit(model, data, objective, budget, eval_data=eval_data, history=history).selected


def attack_htc(dims, nasty, data, cfg, budget, *, eval_data=None, history=None,
               activation="relu"):
    """High-temperature composition attack. ``cfg.alpha == 1`` ignores labels."""
    targets = soften(_frozen_logits(nasty, data), cfg.tau)
    hard, soft = 1.0 - cfg.alpha, cfg.alpha * cfg.m

    def objective(z, idx):
        return kernels.distill_objective(z, data.labels[idx], hard, targets[idx], soft, 1.0)
    return _run(dims, data, budget, objective, eval_data, history, activation)


def build_scm_chain(nasty, spec, data, budget, *, eval_data=None, activation=None):
    """``[S^1, ..., S^k]`` with ``S^1 = nasty`` and ``S^i`` contrasted against ``S^{i-1}``.

    Step ``i`` trains with ``budget.reseeded("chain", i)``, so any link can be
    regenerated from its predecessor alone.
    """
    chain = [nasty]
    for i in range(2, spec.k + 1):
        prev = chain[-1]
        dims = spec.step_dims(i - 2, prev.layer_dims)
        chain.append(train_nasty(dims, prev, data, spec.step_config(i - 2),
                                 budget.reseeded("chain", i), eval_data=eval_data,
                                 activation=activation or prev.activation))
        log.debug("built chain member %d/%d", i, spec.k)
    return chain


def chain_ensemble_logits(chain, inputs, space="logit", tau=1.0, include_first=True):
    members = chain if include_first or len(chain) == 1 else chain[1:]
    return ensemble_logits([forward(m, inputs) for m in members], space=space, tau=tau)


def attack_scm(dims, chain, data, cfg, budget, *, eval_data=None, history=None,
               activation="relu", space="logit", include_first=True):
    """Distill the logit ensemble of a contrastive chain."""
    if not chain:
        raise ConfigError("SCM needs a nonempty chain")
    for m in chain:
        _frozen_logits(m, data)
    z_ens = chain_ensemble_logits(chain, data.inputs, space, cfg.tau, include_first)
    targets = soften(z_ens, cfg.tau)
    hard, soft = 1.0 - cfg.alpha, cfg.alpha * cfg.m

    def objective(z, idx):
        return kernels.distill_objective(z, data.labels[idx], hard, targets[idx], soft, cfg.tau)
    return _run(dims, data, budget, objective, eval_data, history, activation)


def defend_scm(chain, index):
    """Deploy ``S^index`` (1-based) as the defended teacher."""
    if not 1 <= index <= len(chain):
        raise ConfigError(f"index {index} outside chain of length {len(chain)}")
    return chain[index - 1]
