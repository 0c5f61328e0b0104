"""End-to-end experiment: teachers, stealing arms, chain defenses, report.

Randomness: each run seed ``s`` is split with :func:`~kdsteal.nn.derive_rng`
into ``(s, "teacher")``, ``(s, "nasty")``, ``(s, "chain")`` (then per chain
step) and ``(s, "student")``. Every student arm of a seed shares the same
student init and shuffle stream, so arms differ only in their objective.
The dataset has its own seed inside the dataset spec.
"""

from dataclasses import asdict, dataclass, field, replace
import csv
import hashlib
import io
import json
import logging
from pathlib import Path
import statistics
import time

from . import __version__, kernels
from .checkpoint import save_checkpoint
from .config import PipelineConfig, build
from .data import gen_dataset, load_dataset_pair, subset_data
from .distill import (attack_htc, attack_scm, build_scm_chain,
                      chain_ensemble_logits, defend_scm, train_kd, train_nasty, train_vanilla)
from .errors import KdStealError, PersistenceError
from .metrics import (accuracy, defense_effective, kl_from_logits, kl_to_reference,
                      peak_profile, stealing_occurred)
from .nn import forward

log = logging.getLogger(__name__)

REPORT_VERSION = 1
TIMING_FIELDS = ("seconds", "wall_seconds")
CSV_COLUMNS = ("seed", "arm", "status", "accuracy", "correct", "total", "error")


@dataclass
class ArmResult:
    name: str
    status: str = "ok"          # ok | failed | skipped
    accuracy: float | None = None
    correct: int | None = None
    total: int | None = None
    seconds: float | None = None
    error: str | None = None


@dataclass
class SeedRun:
    seed: int
    models: dict = field(default_factory=dict)       # teacher-side model -> test accuracy
    arms: list = field(default_factory=list)         # ArmResult per student arm
    comparisons: dict = field(default_factory=dict)  # KL / peak metrics
    predicates: dict = field(default_factory=dict)
    seconds: float | None = None

    def arm(self, name):
        for a in self.arms:
            if a.name == name:
                return a
        return None

    def acc(self, name):
        a = self.arm(name)
        return a.accuracy if a is not None and a.status == "ok" else None


@dataclass
class ExperimentReport:
    run_id: str
    seeds: list
    dataset: dict
    config: dict
    runs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    backend: str = ""
    version: str = ""
    report_version: int = REPORT_VERSION
    wall_seconds: float | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        runs = []
        for r in data.pop("runs", []):
            r = dict(r)
            r["arms"] = [ArmResult(**a) for a in r.get("arms", [])]
            runs.append(SeedRun(**r))
        return cls(runs=runs, **data)

    def arm_names(self):
        names = []
        for r in self.runs:
            for a in r.arms:
                if a.name not in names:
                    names.append(a.name)
        return names

    def arm_accuracies(self, name):
        return [r.acc(name) for r in self.runs]

    def median(self, name):
        vals = [v for v in self.arm_accuracies(name) if v is not None]
        return statistics.median(vals) if vals else None


def strip_timing(obj):
    """Copy of a report dict with wall-clock fields nulled."""
    if isinstance(obj, dict):
        return {k: (None if k in TIMING_FIELDS else strip_timing(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def report_json(report, timing=True):
    data = report.to_dict()
    return json.dumps(data if timing else strip_timing(data), indent=2) + "\n"


def report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for run in report.runs:
        for a in run.arms:
            writer.writerow([run.seed, a.name, a.status,
                             "" if a.accuracy is None else repr(a.accuracy),
                             "" if a.correct is None else a.correct,
                             "" if a.total is None else a.total,
                             a.error or ""])
    return buf.getvalue()


def emit_report(report, path, fmt=None):
    """Write ``report`` as ``json`` (full nested document) or ``csv`` (seed x arm rows)."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "json")
    text = report_csv(report) if fmt == "csv" else report_json(report)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise PersistenceError(f"{path}: cannot write report ({exc})") from exc
    return path


def load_report(path):
    path = Path(path)
    try:
        return ExperimentReport.from_dict(json.loads(path.read_text()))
    except (OSError, ValueError, TypeError) as exc:
        raise PersistenceError(f"{path}: not a readable report ({exc})") from exc


def config_from_report(report):
    return build(PipelineConfig, report.config).validate()


def _run_id(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_data(cfg):
    if cfg.dataset_path:
        train, test = load_dataset_pair(cfg.dataset_path)
        return train, test, {"path": cfg.dataset_path, **train.provenance}
    train, test = gen_dataset(cfg.dataset)
    return train, test, dict(train.provenance)


class _SeedRunner:
    def __init__(self, cfg, train, test, seed, out_dir):
        self.cfg, self.train, self.test, self.seed = cfg, train, test, seed
        self.out_dir = out_dir
        self.run = SeedRun(seed=seed)
        base_t = replace(cfg.teacher_budget, seed=seed)
        self.teacher_budget = base_t.reseeded("teacher")
        self.nasty_budget = base_t.reseeded("nasty")
        self.chain_budget = base_t.reseeded("chain")
        self.student_budget = replace(cfg.student_budget, seed=seed).reseeded("student")

    def _save(self, name, model, acc):
        if self.out_dir is None or not self.cfg.save_checkpoints:
            return
        save_checkpoint(model, self.out_dir / f"seed_{self.seed}" / f"{name}.ckpt",
                        meta={"seed": self.seed, "name": name, "test_accuracy": acc})

    def model(self, name, fn):
        model = fn()
        acc = accuracy(model, self.test).value
        self.run.models[name] = acc
        self._save(name, model, acc)
        return model

    def arm(self, name, fn):
        t0 = time.perf_counter()
        result = ArmResult(name)
        try:
            student = fn()
            score = accuracy(student, self.test)
            result.accuracy, result.correct, result.total = score.value, score.correct, score.total
            self._save(name, student, score.value)
        except (KdStealError, ArithmeticError, ValueError, FloatingPointError) as exc:
            log.warning("seed %s arm %s failed: %s", self.seed, name, exc)
            result.status, result.error = "failed", f"{type(exc).__name__}: {exc}"
        result.seconds = time.perf_counter() - t0
        self.run.arms.append(result)
        return result

    def skip(self, name, reason):
        self.run.arms.append(ArmResult(name, status="skipped", error=reason))


def _run_seed(cfg, train, test, seed, out_dir):
    t0 = time.perf_counter()
    r = _SeedRunner(cfg, train, test, seed, out_dir)
    T, S, act = cfg.teacher_dims, cfg.student_dims, cfg.activation
    sb, ev = r.student_budget, test
    teacher = r.model("teacher", lambda: train_vanilla(T, train, r.teacher_budget, eval_data=ev, activation=act))
    nasty = r.model("nasty", lambda: train_nasty(T, teacher, train, cfg.nasty, r.nasty_budget,
                                                   eval_data=ev, activation=act))

    r.arm("vanilla", lambda: train_vanilla(S, train, sb, eval_data=ev, activation=act))
    r.arm("normal_kd", lambda: train_kd(S, teacher, train, cfg.kd, sb, eval_data=ev, activation=act))
    r.arm("nasty_kd", lambda: train_kd(S, nasty, train, cfg.kd, sb, eval_data=ev, activation=act))

    need_chain = "scm" in cfg.attacks or cfg.defense_indices or cfg.k_sweep
    chain = []
    if need_chain:
        k_max = max([cfg.chain.k] + list(cfg.k_sweep))
        spec = replace(cfg.chain, k=k_max)
        chain = build_scm_chain(nasty, spec, train, r.chain_budget, eval_data=ev)
        for i, member in enumerate(chain[1:], start=2):
            r.run.models[f"s{i}"] = accuracy(member, test).value
            r._save(f"s{i}", member, r.run.models[f"s{i}"])
        r.run.models["s1"] = r.run.models["nasty"]
    main_chain = chain[:cfg.chain.k]

    def scm_arm(members):
        return lambda: attack_scm(S, members, train, cfg.scm, sb, eval_data=ev, activation=act,
                                  space=cfg.ensemble_space, include_first=cfg.ensemble_include_first)

    if "htc" in cfg.attacks:
        r.arm("htc", lambda: attack_htc(S, nasty, train, cfg.htc, sb, eval_data=ev, activation=act))
    if "scm" in cfg.attacks:
        r.arm("scm", scm_arm(main_chain))
    for k in cfg.k_sweep:
        r.arm(f"scm_k{k}", scm_arm(chain[:k]))

    for i in cfg.defense_indices:
        defended = defend_scm(main_chain, i)
        r.arm(f"htc_vs_s{i}", lambda d=defended: attack_htc(S, d, train, cfg.htc, sb, eval_data=ev,
                                                             activation=act))
        r.arm(f"kd_vs_s{i}", lambda d=defended: train_kd(S, d, train, cfg.kd, sb, eval_data=ev,
                                                          activation=act))

    if cfg.nasty_es:
        target = r.run.models.get(f"s{cfg.defense_indices[0]}") if cfg.defense_indices else None
        if target is None:
            r.skip("htc_vs_nasty_es", "needs a chain defense accuracy to match")
            r.skip("kd_vs_nasty_es", "needs a chain defense accuracy to match")
        else:
            es_budget = replace(r.nasty_budget, early_stop_acc=target)
            es = r.model("nasty_es", lambda: train_nasty(T, teacher, train, cfg.nasty, es_budget,
                                                         eval_data=ev, activation=act))
            r.arm("htc_vs_nasty_es", lambda: attack_htc(S, es, train, cfg.htc, sb, eval_data=ev,
                                                        activation=act))
            r.arm("kd_vs_nasty_es", lambda: train_kd(S, es, train, cfg.kd, sb, eval_data=ev,
                                                     activation=act))

    for frac in cfg.data_fractions:
        sub = subset_data(train, frac, seed)
        r.arm(f"htc_frac{frac:g}", lambda s=sub: attack_htc(S, nasty, s, cfg.htc, sb, eval_data=ev,
                                                            activation=act))
        r.arm(f"nasty_kd_frac{frac:g}", lambda s=sub: train_kd(S, nasty, s, cfg.kd, sb, eval_data=ev,
                                                               activation=act))
    if cfg.no_label:
        r.arm("htc_no_label", lambda: attack_htc(S, nasty, train, replace(cfg.htc, alpha=1.0), sb,
                                                 eval_data=ev, activation=act))
        r.arm("nasty_kd_no_label", lambda: train_kd(S, nasty, train, replace(cfg.kd, alpha=1.0), sb,
                                                    eval_data=ev, activation=act))

    # comparisons against the original teacher
    comp = r.run.comparisons
    z_teacher = forward(teacher, test.inputs)
    comp["kl_nasty_teacher"] = kl_to_reference(nasty, teacher, test, cfg.kl_tau)
    comp["peaks_teacher"] = peak_profile(teacher, test, cfg.peak_rho).mean_peaks
    comp["peaks_nasty"] = peak_profile(nasty, test, cfg.peak_rho).mean_peaks
    if main_chain:
        z_ens = chain_ensemble_logits(main_chain, test.inputs, cfg.ensemble_space, cfg.kl_tau,
                                      cfg.ensemble_include_first)
        comp["kl_ensemble_teacher"] = float(kl_from_logits(z_ens, z_teacher, cfg.kl_tau).mean())
        for i, member in enumerate(chain, start=1):
            comp[f"peaks_s{i}"] = peak_profile(member, test, cfg.peak_rho).mean_peaks
            comp[f"kl_s{i}_teacher"] = kl_to_reference(member, teacher, test, cfg.kl_tau)

    pred = r.run.predicates
    acc = r.run.acc
    if acc("vanilla") is not None:
        if acc("normal_kd") is not None:
            pred["stealing_normal_teacher"] = stealing_occurred(acc("normal_kd"), acc("vanilla"))
        if acc("nasty_kd") is not None:
            pred["stealing_nasty_teacher"] = stealing_occurred(acc("nasty_kd"), acc("vanilla"))
    if acc("nasty_kd") is not None and acc("normal_kd") is not None:
        pred["defense_nasty_vs_kd"] = defense_effective(acc("nasty_kd"), acc("normal_kd"))
    for name in ("htc", "scm"):
        if acc(name) is not None and acc("nasty_kd") is not None:
            # the attack undoes the defense if it beats plain KD from the nasty teacher
            pred[f"{name}_beats_nasty_kd"] = acc(name) > acc("nasty_kd")
    for i in cfg.defense_indices:
        if acc(f"htc_vs_s{i}") is not None and acc("htc") is not None:
            pred[f"defense_s{i}_vs_nasty_htc"] = defense_effective(acc(f"htc_vs_s{i}"), acc("htc"))
        if acc(f"kd_vs_s{i}") is not None and acc("normal_kd") is not None:
            pred[f"defense_s{i}_vs_kd"] = defense_effective(acc(f"kd_vs_s{i}"), acc("normal_kd"))
    r.run.seconds = time.perf_counter() - t0
    return r.run


def _summary(report):
    out = {"median_accuracy": {}}
    for name in report.arm_names():
        out["median_accuracy"][name] = report.median(name)
    for key in ("teacher", "nasty"):
        vals = [r.models[key] for r in report.runs if key in r.models]
        if vals:
            out[f"median_{key}_accuracy"] = statistics.median(vals)
    return out


def run_pipeline(cfg, out_dir=None):
    """Run every configured arm for every seed and return an :class:`ExperimentReport`.

    With ``out_dir`` (or ``cfg.output_dir``) set, checkpoints and the JSON/CSV
    report are written there. A failing student arm is recorded and the
    remaining arms still run.
    """
    cfg.validate()
    t0 = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else (Path(cfg.output_dir) if cfg.output_dir else None)
    train, test, descriptor = _load_data(cfg)
    cfg_dict = cfg.to_dict()
    report = ExperimentReport(run_id=_run_id(cfg_dict), seeds=list(cfg.seeds), dataset=descriptor,
                              config=cfg_dict, backend=kernels.BACKEND, version=__version__)
    for seed in cfg.seeds:
        log.info("seed %s", seed)
        report.runs.append(_run_seed(cfg, train, test, seed, out_dir))
    report.summary = _summary(report)
    report.wall_seconds = time.perf_counter() - t0
    if out_dir is not None:
        emit_report(report, out_dir / "report.json", "json")
        emit_report(report, out_dir / "report.csv", "csv")
    return report


__all__ = ["ArmResult", "SeedRun", "ExperimentReport", "run_pipeline", "emit_report", "load_report",
           "report_json", "report_csv", "strip_timing", "config_from_report"]
