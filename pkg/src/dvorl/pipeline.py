"""End-to-end DVORL experiments driven by one JSON run config.

Stages: generate -> train-dve -> value -> filter -> train-rl -> evaluate.
Every random draw comes from a sub-seed ``derive_seed(master, stage, arm,
repetition)``. The learner and evaluation stages use an empty arm, so the
baseline arm (full source buffer) and the DVORL arm (filtered buffer) share
learner seeds and evaluation episodes and differ only in their data.

Artifacts of ``run_single`` (relative to the output directory):

    source.dvrb, target.dvrb, filtered.dvrb   replay buffers
    dve.dvnn, dve_history.csv, values.csv     value estimator and its output
    policy_baseline.dvqp, policy_dvorl.dvqp   offline policies
    eval_baseline.json, eval_dvorl.json       evaluation results
    report.json                               deterministic run report
    timing.json                               wall-clock per stage
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import logging
import math
import platform
import time
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import buffer as buf
from . import dve, neural, offline
from .offline import LearnerConfig
from .divergence import FeatureMode
from .dve import DveConfig
from .envs import DomainConfig, DomainConfigError, QLearningParams, generate_buffer, make_env, train_behavior

log = logging.getLogger(__name__)

__all__ = [
    "BufferSpec",
    "ConfigError",
    "EvalSpec",
    "RunConfig",
    "StageError",
    "config_from_dict",
    "config_to_dict",
    "derive_seed",
    "load_config",
    "run_removal_curve",
    "run_single",
    "run_transfer_benchmark",
]

SINGLE = "single"
TRANSFER = "transfer_benchmark"
REMOVAL = "removal_curve"
EXPERIMENTS = (SINGLE, TRANSFER, REMOVAL)

BASELINE = "baseline"
DVORL = "dvorl"
ARMS = (BASELINE, DVORL)


class ConfigError(ValueError):
    """Malformed run config; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BufferSpec:
    source_size: int = 20000
    target_size: int = 500
    source_explore: float = 0.5
    target_explore: float = 0.1
    behavior_episodes: int = 3000
    q_learning: QLearningParams = field(default_factory=QLearningParams)

    def __post_init__(self):
        if self.source_size < 1 or self.target_size < 1:
            raise ValueError("buffer sizes must be >= 1")
        for name in ("source_explore", "target_explore"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.behavior_episodes < 0:
            raise ValueError("behavior_episodes must be >= 0")


@dataclass(frozen=True)
class EvalSpec:
    episodes: int = 100
    # best-checkpoint selection on held-out episodes; off = last sweep
    select_checkpoint: bool = True
    checkpoint_episodes: int = 50

    def __post_init__(self):
        if self.episodes < 1 or self.checkpoint_episodes < 1:
            raise ValueError("episode counts must be >= 1")


@dataclass(frozen=True)
class BenchmarkSpec:
    repetitions: int = 10
    feature_modes: tuple[FeatureMode, ...] = (FeatureMode.STATE_ONLY, FeatureMode.STATE_ACTION_NEXT)

    def __post_init__(self):
        object.__setattr__(self, "feature_modes", tuple(FeatureMode(m) for m in self.feature_modes))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.feature_modes:
            raise ValueError("at least one feature mode is required")


@dataclass(frozen=True)
class RemovalSpec:
    fractions: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    repetitions: int = 10

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def _default_target() -> DomainConfig:
    return DomainConfig(slip_prob=0.3)


@dataclass(frozen=True)
class RunConfig:
    experiment: str = SINGLE
    seed: int = 0
    source: DomainConfig = field(default_factory=DomainConfig)
    target: DomainConfig = field(default_factory=_default_target)
    # extra shifted targets for the transfer benchmark, next to ``target``
    shifted_targets: tuple[DomainConfig, ...] = ()
    buffers: BufferSpec = field(default_factory=BufferSpec)
    dve: DveConfig = field(default_factory=DveConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    removal: RemovalSpec = field(default_factory=RemovalSpec)
    output_dir: str = "runs/dvorl"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
        if self.buffers.source_size <= self.buffers.target_size:
            log.warning(
                "source buffer (%d) is not larger than the target buffer (%d)",
                self.buffers.source_size,
                self.buffers.target_size,
            )

    @property
    def targets(self) -> list[DomainConfig]:
        return [self.target, *self.shifted_targets]


# Fields that must be present in a config file even though the dataclass
# has a default; everything else may be omitted.
REQUIRED = {"dve": ("selection_threshold",)}


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a section (JSON object)")
        return _build(tp, value, path)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} entries")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            choices = ", ".join(m.value for m in tp)
            raise ConfigError(path, f"expected one of {choices}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _build(cls, data: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    prefix = f"{path}." if path else ""
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{key}", "unknown field")
    for section, keys in REQUIRED.items():
        # required keys are reported even when their whole section is absent
        head, _, rest = section.rpartition(".")
        if head == path and rest not in data:
            raise ConfigError(f"{prefix}{rest}.{keys[0]}", "required field is missing")
    for key in REQUIRED.get(path, ()):
        if key not in data:
            raise ConfigError(f"{prefix}{key}", "required field is missing")
    kwargs = {k: _convert(hints[k], v, f"{prefix}{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except DomainConfigError as exc:
        name, message = exc.problems[0]
        raise ConfigError(f"{prefix}{name}", message) from None
    except (ValueError, TypeError) as exc:
        message = str(exc)
        # messages of the form "<field> must ..." point at that field
        first = message.split(" ", 1)[0]
        where = f"{prefix}{first}" if first in names else (path or "<root>")
        raise ConfigError(where, message) from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    """Every field, nested sections included; loads back to an equal config."""
    return _plain(cfg)


# --------------------------------------------------------------------------
# seeds


STAGES = (
    "behavior-source",
    "behavior-target",
    "buffer-source",
    "buffer-target",
    "dve",
    "learner",
    "checkpoint-eval",
    "eval",
)


def derive_seed(master: int, stage: str, arm: str = "", repetition: int = 0) -> int:
    """Stable 63-bit sub-seed from ``sha256("master|stage|arm|repetition")``."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    digest = hashlib.sha256(f"{master}|{stage}|{arm}|{repetition}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def run_seeds(master: int, repetition: int = 0, target_index: int = 0) -> dict[str, int]:
    """All sub-seeds of one run; target-side stages also depend on the target index."""
    out = {}
    for stage in STAGES:
        arm = f"target{target_index}" if stage in ("behavior-target", "buffer-target") else ""
        out[stage] = derive_seed(master, stage, arm, repetition)
    return out


# --------------------------------------------------------------------------
# stages (shared with the CLI)


def stage_generate_source(cfg: RunConfig, seeds: dict) -> buf.ReplayBuffer:
    spec = cfg.buffers
    policy = train_behavior(
        make_env(cfg.source, seeds["behavior-source"]), spec.behavior_episodes, spec.q_learning, seeds["behavior-source"]
    )
    env = make_env(cfg.source, seeds["buffer-source"])
    return generate_buffer(env, policy, spec.source_size, spec.source_explore, seeds["buffer-source"])


def stage_generate_target(cfg: RunConfig, target: DomainConfig, seeds: dict) -> buf.ReplayBuffer:
    spec = cfg.buffers
    policy = train_behavior(
        make_env(target, seeds["behavior-target"]), spec.behavior_episodes, spec.q_learning, seeds["behavior-target"]
    )
    env = make_env(target, seeds["buffer-target"])
    return generate_buffer(env, policy, spec.target_size, spec.target_explore, seeds["buffer-target"])


def stage_train_dve(cfg: RunConfig, source, target, seeds: dict, feature_mode=None):
    dcfg = replace(cfg.dve, seed=seeds["dve"])
    if feature_mode is not None:
        dcfg = replace(dcfg, feature_mode=FeatureMode(feature_mode))
    return dve.train_dve(source, target, dcfg)


def stage_value(cfg: RunConfig, net, source) -> dve.ValuedBuffer:
    return dve.value_buffer(net, source, cfg.dve.batch_size)


def stage_filter(cfg: RunConfig, valued: dve.ValuedBuffer) -> buf.ReplayBuffer:
    return dve.filter_buffer(valued, cfg.dve.selection_threshold)


@dataclass
class TrainedPolicy:
    policy: offline.OfflinePolicy
    result: offline.TrainingResult
    checkpoint: int  # sweep count of the selected checkpoint
    checkpoint_scores: list[tuple[int, float]]


def stage_train_rl(cfg: RunConfig, data: buf.ReplayBuffer, target: DomainConfig, seeds: dict) -> TrainedPolicy:
    """Train on ``data``; with checkpoint selection, keep the checkpoint with
    the best mean return on held-out episodes (first one on ties)."""
    lcfg = replace(cfg.learner, seed=seeds["learner"])
    result = offline.train_offline(data, lcfg)
    last = cfg.learner.iterations
    if not cfg.evaluation.select_checkpoint:
        return TrainedPolicy(result.policy, result, last, [])
    scores = []
    cache: dict[bytes, float] = {}
    best = None
    for it, q in result.checkpoints:
        candidate = offline.with_q(result.policy, q)
        key = candidate.greedy_actions().tobytes()
        if key not in cache:
            ev = offline.evaluate_policy(candidate, target, cfg.evaluation.checkpoint_episodes, seeds["checkpoint-eval"])
            cache[key] = ev.mean_return
        scores.append((it, cache[key]))
        if best is None or cache[key] > best[1]:
            best = (it, cache[key], candidate)
    return TrainedPolicy(best[2], result, best[0], scores)


def stage_evaluate(cfg: RunConfig, policy, target: DomainConfig, seeds: dict) -> offline.EvalResult:
    return offline.evaluate_policy(policy, target, cfg.evaluation.episodes, seeds["eval"])


# --------------------------------------------------------------------------
# summaries


def buffer_stats(b: buf.ReplayBuffer) -> dict:
    if len(b) == 0:
        return {"size": 0, "domain_tag": b.domain_tag}
    a = b.arrays
    return {
        "size": len(b),
        "domain_tag": b.domain_tag,
        "distinct_states": int(len(np.unique(a.states, axis=0))),
        "mean_reward": float(a.rewards.mean()),
        "terminal_fraction": float(a.terminals.mean()),
    }


def history_summary(state: dve.DveTrainerState, cfg: RunConfig, batches_per_epoch: int) -> dict:
    h = np.array(state.history) if state.history else np.zeros((0, 3))
    window = max(1, min(batches_per_epoch, len(h)))
    return {
        "updates": int(state.step),
        "floor_steps": int(state.floor_steps),
        "epochs": cfg.dve.epochs,
        "batches_per_epoch": batches_per_epoch,
        "r_phi_first_epoch_mean": float(h[:window, 0].mean()) if len(h) else None,
        "r_phi_last_epoch_mean": float(h[-window:, 0].mean()) if len(h) else None,
        "r_rolling_final": float(state.r_rolling),
        "surrogate_mode": cfg.dve.surrogate_mode,
        "reward_mode": cfg.dve.reward_mode,
        "kl_method": cfg.dve.kl.method,
    }


def value_summary(values: np.ndarray, threshold: float) -> dict:
    kept = int(np.sum(values >= threshold))
    return {
        "min": float(values.min()),
        "median": float(np.median(values)),
        "max": float(values.max()),
        "mean": float(values.mean()),
        "threshold": threshold,
        "kept": kept,
        "kept_fraction": kept / len(values),
    }


def versions() -> dict:
    from . import __version__

    return {
        "dvorl": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def run(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.stages[stage] = self.stages.get(stage, 0.0) + time.perf_counter() - start


# --------------------------------------------------------------------------
# experiments


def run_single(cfg: RunConfig, out_dir=None) -> dict:
    """Full pipeline for one (source, target) pair; returns the report dict.

    Artifacts are written as soon as each stage finishes, so a failing
    stage leaves its predecessors' outputs behind.
    """
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = run_seeds(cfg.seed)
    timer = _Timer()
    start = time.perf_counter()

    source = timer.run("generate", stage_generate_source, cfg, seeds)
    target = timer.run("generate", stage_generate_target, cfg, cfg.target, seeds)
    buf.save(source, out / "source.dvrb")
    buf.save(target, out / "target.dvrb")

    net, state = timer.run("train-dve", stage_train_dve, cfg, source, target, seeds)
    neural.save(net, out / "dve.dvnn")
    dve.write_history_csv(state.history, out / "dve_history.csv")

    valued = timer.run("value", stage_value, cfg, net, source)
    dve.write_values_csv(valued.values, out / "values.csv")

    filtered = timer.run("filter", stage_filter, cfg, valued)
    buf.save(filtered, out / "filtered.dvrb")

    arms = {}
    for arm, data in ((BASELINE, source), (DVORL, filtered)):
        if len(data) == 0:
            raise StageError("train-rl", ValueError(f"{arm} arm has an empty buffer"))
        trained = timer.run("train-rl", stage_train_rl, cfg, data, cfg.target, seeds)
        offline.save(trained.policy, out / f"policy_{arm}.dvqp")
        result = timer.run("evaluate", stage_evaluate, cfg, trained.policy, cfg.target, seeds)
        eval_doc = eval_document(result, seeds["eval"], arm)
        write_json(eval_doc, out / f"eval_{arm}.json")
        arms[arm] = {
            **{k: v for k, v in eval_doc.items() if k != "returns"},
            "buffer_size": len(data),
            "checkpoint": trained.checkpoint,
            "checkpoint_scores": [[it, s] for it, s in trained.checkpoint_scores],
            "final_sup_diff": trained.result.sup_diffs[-1],
        }

    n_batches = len(buf.batch_slices(len(source), cfg.dve.batch_size))
    report = {
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "buffers": {
            "source": buffer_stats(source),
            "target": buffer_stats(target),
            "filtered": buffer_stats(filtered),
        },
        "dve": history_summary(state, cfg, n_batches),
        "values": value_summary(valued.values, cfg.dve.selection_threshold),
        "arms": arms,
        "versions": versions(),
    }
    write_json(report, out / "report.json")
    write_json({"wall_clock_s": time.perf_counter() - start, "stages_s": timer.stages}, out / "timing.json")
    return report


def eval_document(result: offline.EvalResult, seed: int, arm: str) -> dict:
    return {"arm": arm, "seed": seed, **result.to_dict()}


def _mean_se(xs) -> tuple[float, float]:
    xs = np.asarray(xs, dtype=np.float64)
    se = float(xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0
    return float(xs.mean()), se


TRANSFER_HEADER = ["setting", "arm", "feature_mode", "mean_return", "std_error", "repetitions"]
TRANSFER_RUNS_HEADER = ["setting", "repetition", "arm", "feature_mode", "mean_return", "std_error", "buffer_size"]


def run_transfer_benchmark(cfg: RunConfig, out_dir=None) -> dict:
    """Grid of (setting x arm x feature mode) mean target returns.

    Settings are the identical-domain case (target = source) followed by
    ``cfg.target`` and ``cfg.shifted_targets``. Within a repetition all
    settings share one source buffer. The baseline arm does not depend on
    the feature mode; it is trained once and reported in both columns.
    """
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    settings = [("identical", cfg.source)] + [(f"shifted{i}", t) for i, t in enumerate(cfg.targets, start=1)]
    modes = cfg.benchmark.feature_modes
    runs = []
    start = time.perf_counter()
    for rep in range(cfg.benchmark.repetitions):
        source = None
        for t_index, (name, domain) in enumerate(settings):
            seeds = run_seeds(cfg.seed, rep, t_index)
            if source is None:
                source = _stage("generate", stage_generate_source, cfg, seeds)
            target = _stage("generate", stage_generate_target, cfg, domain, seeds)
            base = _arm_return(cfg, source, domain, seeds)
            for mode in modes:
                runs.append([name, rep, BASELINE, mode.value, base.mean_return, base.std_error, len(source)])
            for mode in modes:
                net, _ = _stage("train-dve", stage_train_dve, cfg, source, target, seeds, mode)
                filtered = stage_filter(cfg, stage_value(cfg, net, source))
                res = _arm_return(cfg, filtered, domain, seeds)
                runs.append([name, rep, DVORL, mode.value, res.mean_return, res.std_error, len(filtered)])

    grid = []
    for name, _ in settings:
        for arm in ARMS:
            for mode in modes:
                xs = [r[4] for r in runs if r[0] == name and r[2] == arm and r[3] == mode.value]
                mean, se = _mean_se(xs)
                grid.append([name, arm, mode.value, mean, se, len(xs)])
    _write_csv(out / "transfer.csv", TRANSFER_HEADER, grid)
    _write_csv(out / "transfer_runs.csv", TRANSFER_RUNS_HEADER, runs)

    wins = {}
    for name, _ in settings:
        for mode in modes:
            base = {r[1]: r[4] for r in runs if r[0] == name and r[2] == BASELINE and r[3] == mode.value}
            dv = {r[1]: r[4] for r in runs if r[0] == name and r[2] == DVORL and r[3] == mode.value}
            wins[f"{name}/{mode.value}"] = sum(dv[k] >= base[k] for k in base)
    summary = {
        "config": config_to_dict(cfg),
        "settings": [{"name": n, "domain": _plain(d)} for n, d in settings],
        "grid": [dict(zip(TRANSFER_HEADER, row)) for row in grid],
        "dvorl_at_least_baseline": wins,
        "repetitions": cfg.benchmark.repetitions,
        "versions": versions(),
    }
    write_json(summary, out / "transfer_summary.json")
    write_json({"wall_clock_s": time.perf_counter() - start}, out / "timing.json")
    return summary


REMOVAL_HEADER = ["side", "fraction", "mean_return", "std_error", "repetitions"]
REMOVAL_RUNS_HEADER = ["repetition", "side", "fraction", "mean_return", "std_error", "buffer_size"]
SIDES = ("highest", "lowest")


def run_removal_curve(cfg: RunConfig, out_dir=None) -> dict:
    """Return after excluding the top or bottom fraction of transitions by value.

    One value estimator per repetition; every (side, fraction) cell trains
    and evaluates a fresh learner on the shifted target ``cfg.target``.
    ``removal.csv`` holds the curve averaged over repetitions, one series per side,
    ``removal_runs.csv`` the per-repetition cells with episode standard
    errors.
    """
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    start = time.perf_counter()
    for rep in range(cfg.removal.repetitions):
        seeds = run_seeds(cfg.seed, rep)
        source = _stage("generate", stage_generate_source, cfg, seeds)
        target = _stage("generate", stage_generate_target, cfg, cfg.target, seeds)
        net, _ = _stage("train-dve", stage_train_dve, cfg, source, target, seeds)
        valued = stage_value(cfg, net, source)
        done = {}
        for side in SIDES:
            for fraction in cfg.removal.fractions:
                kept = dve.exclude_fraction(valued, fraction, side)
                # identical survivor sets (e.g. fraction 0 on both sides) share one result
                dropped = dve.removal_order(valued.values, side)[: dve.n_removed(fraction, len(source))]
                key = np.sort(dropped).tobytes()
                if key not in done:
                    done[key] = _arm_return(cfg, kept, cfg.target, seeds) if len(kept) else None
                res = done[key]
                mean = res.mean_return if res is not None else float("nan")
                se = res.std_error if res is not None else float("nan")
                runs.append([rep, side, fraction, mean, se, len(kept)])

    curve = []
    for side in SIDES:
        for fraction in cfg.removal.fractions:
            xs = [r[3] for r in runs if r[1] == side and r[2] == fraction]
            mean, se = _mean_se(xs)
            curve.append([side, fraction, mean, se, len(xs)])
    _write_csv(out / "removal.csv", REMOVAL_HEADER, curve)
    _write_csv(out / "removal_runs.csv", REMOVAL_RUNS_HEADER, runs)
    summary = {
        "config": config_to_dict(cfg),
        "curve": [dict(zip(REMOVAL_HEADER, row)) for row in curve],
        "runs": [dict(zip(REMOVAL_RUNS_HEADER, row)) for row in runs],
        "versions": versions(),
    }
    write_json(summary, out / "removal_summary.json")
    write_json({"wall_clock_s": time.perf_counter() - start}, out / "timing.json")
    return summary


def _stage(stage: str, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise StageError(stage, exc) from exc


def _arm_return(cfg, data, domain, seeds) -> offline.EvalResult:
    trained = _stage("train-rl", stage_train_rl, cfg, data, domain, seeds)
    return _stage("evaluate", stage_evaluate, cfg, trained.policy, domain, seeds)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run(cfg: RunConfig, out_dir=None) -> dict:
    """Dispatch on ``cfg.experiment``."""
    if cfg.experiment == SINGLE:
        return run_single(cfg, out_dir)
    if cfg.experiment == TRANSFER:
        return run_transfer_benchmark(cfg, out_dir)
    return run_removal_curve(cfg, out_dir)

