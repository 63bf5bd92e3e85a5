"""Training and evaluation campaigns, metrics and result tables."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from .baselines import LTGPolicy, SPGPolicy
from .constellation import ConfigurationError, ConstellationSpec, build_constellation, propagate
from .netsim import SimParams, SlotLedger, TransitionBuilder, sample_link_rates, step_slot
from .policy import (Minibatch, NeuralPolicy, PolicyParameters, TrainingError, a2c_update,
                     load_checkpoint, save_checkpoint)
from .traffic import Outcome, generate_traffic, merge_carryover

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
POLICY_KINDS = ("tf-darm", "mdg", "spg", "ltg")
TRAINABLE = ("tf-darm", "mdg")
METRICS_COLUMNS = ("episode", "completion_rate", "cum_reward", "delivered", "failed",
                   "inflight", "mean_delay_s", "wall_s")
STARLINK_SHAPES = ((4, 43), (6, 58), (36, 20), (72, 22))
LOAD_COLUMNS = ("load", "policy", "completion_rate", "run_id")


@dataclass
class TrafficParams:
    per_leo_count: int = 20
    demand_bits: float = 5e9
    deadline_s: float = 5.0
    # "uniform": random arrival slot per request; "batch": `batches` evenly spaced batches
    arrival_pattern: str = "uniform"
    batches: int = 1
    first_slot: int = 0
    deadline_range: Optional[tuple] = None


@dataclass
class TrainerParams:
    episodes: int = 500
    gamma: float = 0.99
    batch_size: int = 64
    lr_actor: float = 2e-4
    lr_critic: float = 5e-4
    hidden: tuple = (64, 64)
    optimizer: str = "sgd"
    entropy_coef: float = 0.0
    target_mode: str = "stop_gradient"
    target_sync_every: int = 100
    sampling: str = "fifo"  # or "uniform"
    replay_capacity: int = 10000
    # wall-clock timings are the only non-reproducible metrics column; off, they are written as 0
    record_wall_clock: bool = False


@dataclass
class ExperimentConfig:
    constellation: ConstellationSpec = field(default_factory=ConstellationSpec.iridium)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    sim: SimParams = field(default_factory=SimParams)
    trainer: TrainerParams = field(default_factory=TrainerParams)
    policy: str = "tf-darm"
    seed: int = 0
    # topology phase advance between consecutive episodes
    episode_phase_stride_slots: int = 7
    output_dir: Optional[str] = None
    version: int = CONFIG_VERSION

    def validate(self) -> None:
        self.constellation.validate()
        self.sim.validate()
        if self.policy not in POLICY_KINDS:
            raise ConfigurationError(f"policy: must be one of {POLICY_KINDS}, got {self.policy!r}")
        if self.trainer.episodes < 1:
            raise ConfigurationError("trainer.episodes: must be >= 1")
        if self.trainer.batch_size < 1:
            raise ConfigurationError("trainer.batch_size: must be >= 1")
        if self.trainer.sampling not in ("fifo", "uniform"):
            raise ConfigurationError("trainer.sampling: must be 'fifo' or 'uniform'")
        if self.trainer.optimizer not in ("sgd", "adam"):
            raise ConfigurationError("trainer.optimizer: must be 'sgd' or 'adam'")
        if self.trainer.target_mode not in ("stop_gradient", "lagged"):
            raise ConfigurationError("trainer.target_mode: must be 'stop_gradient' or 'lagged'")
        if self.traffic.per_leo_count < 0:
            raise ConfigurationError("traffic.per_leo_count: must be >= 0")
        if self.traffic.arrival_pattern not in ("uniform", "batch"):
            raise ConfigurationError("traffic.arrival_pattern: must be 'uniform' or 'batch'")
        if not self.traffic.demand_bits > 0 or not self.traffic.deadline_s > 0:
            raise ConfigurationError("traffic.demand_bits and traffic.deadline_s: must be > 0")
        if not isinstance(self.seed, int):
            raise ConfigurationError("seed: must be an explicit integer")
        if self.version != CONFIG_VERSION:
            raise ConfigurationError(f"version: unsupported config version {self.version}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trainer"]["hidden"] = list(d["trainer"]["hidden"])
        return d


_SECTIONS = {"constellation": ConstellationSpec, "traffic": TrafficParams, "sim": SimParams,
             "trainer": TrainerParams}


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in top:
            raise ConfigurationError(f"{key}: unknown config field")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(cls)}
            if not isinstance(value, Mapping):
                raise ConfigurationError(f"{key}: expected a mapping")
            for sub in value:
                if sub not in names:
                    raise ConfigurationError(f"{key}.{sub}: unknown config field")
            section = dict(value)
            if key == "trainer" and "hidden" in section:
                section["hidden"] = tuple(section["hidden"])
            if key == "traffic" and section.get("deadline_range") is not None:
                section["deadline_range"] = tuple(section["deadline_range"])
            if key == "constellation":
                base = ConstellationSpec.iridium()
                kwargs[key] = dataclasses.replace(base, **section)
            else:
                kwargs[key] = cls(**section)
        else:
            kwargs[key] = value
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return config_from_dict(yaml.safe_load(path.read_text()) or {})


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def apply_overrides(cfg: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    """Patch fields from ``section.field=value`` strings (values parsed as YAML scalars)."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"{item}: override must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigurationError(f"{key}: unknown config field")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigurationError(f"{key}: unknown config field")
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)


# -- episodes -----------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    episode: int
    completion_rate: float
    cum_reward: float
    delivered: int
    failed: int
    inflight: int
    mean_delay_s: float
    wall_s: float
    epochs: int = 0

    @property
    def total(self) -> int:
        return self.delivered + self.failed + self.inflight

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRICS_COLUMNS}


def _episode_seeds(seed: int, episode: int):
    traffic, rates, policy = np.random.SeedSequence([seed, episode]).spawn(3)
    return traffic, rates, policy


class Scenario:
    """Roster plus cached snapshots for one constellation / simulator setting."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.roster = build_constellation(cfg.constellation)
        self._snaps: dict[int, Any] = {}

    def snapshot(self, slot: int):
        snap = self._snaps.get(slot)
        if snap is None:
            snap = self._snaps[slot] = propagate(self.roster, slot, self.cfg.sim.tau_s)
        return snap


def run_episode(cfg: ExperimentConfig, policy, episode: int = 0,
                builder: Optional[TransitionBuilder] = None,
                scenario: Optional[Scenario] = None, trace_path=None,
                runtimes_out: Optional[list] = None,
                slot_hook: Optional[Callable[[SlotLedger, list], None]] = None) -> EpisodeMetrics:
    """Play one planning cycle. Requests arriving in slot ``t`` are served from ``t + 1``.

    ``slot_hook(ledger, queue)`` is called after every served slot.
    """
    t0 = time.perf_counter()
    scenario = scenario or Scenario(cfg)
    sim, tr = cfg.sim, cfg.traffic
    n = len(scenario.roster)
    traffic_ss, rate_ss, _ = _episode_seeds(cfg.seed, episode)
    stream = generate_traffic(n, tr.per_leo_count, sim.n_slots, traffic_ss, tr.batches,
                              tr.first_slot, tr.demand_bits, tr.deadline_s, tr.deadline_range,
                              tr.arrival_pattern)
    total = sum(len(b) for b in stream.values())
    rate_seeds = rate_ss.spawn(sim.n_slots)
    phase = episode * cfg.episode_phase_stride_slots
    builder = builder if builder is not None else TransitionBuilder()
    trace = open(trace_path, "w") if trace_path else None

    carry: list = []
    runtimes: list = []
    reward = 0.0
    epochs = 0
    try:
        for slot in range(sim.n_slots):
            new = stream.get(slot - 1, [])
            if not new and not carry:
                continue
            queue = merge_carryover(new, carry)
            runtimes.extend(queue[len(carry):])
            snap = scenario.snapshot(phase + slot)
            ledger = SlotLedger(snap, sample_link_rates(snap, rate_seeds[slot], sim), sim)
            res = step_slot(ledger, queue, policy, builder, keep_records=trace is not None)
            reward += res.reward
            epochs += res.epochs
            if slot_hook is not None:
                slot_hook(ledger, queue)
            if trace is not None:
                for rec in res.records:
                    trace.write(rec.as_json() + "\n")
            carry = [rt for rt in queue if rt.in_flight]
        builder.flush([])
    finally:
        if trace is not None:
            trace.close()

    delivered = [rt for rt in runtimes if rt.outcome is Outcome.DELIVERED]
    failed = sum(rt.outcome is Outcome.FAILED for rt in runtimes)
    if runtimes_out is not None:
        runtimes_out.extend(runtimes)
    return EpisodeMetrics(
        episode=episode,
        completion_rate=len(delivered) / total if total else 0.0,
        cum_reward=float(reward),
        delivered=len(delivered),
        failed=int(failed),
        inflight=total - len(delivered) - int(failed),
        mean_delay_s=float(np.mean([rt.elapsed_delay_s for rt in delivered])) if delivered else 0.0,
        wall_s=time.perf_counter() - t0,
        epochs=epochs,
    )


# -- training -----------------------------------------------------------------

class A2CTrainer:
    """Collects transitions and runs an update whenever a full minibatch is available."""

    def __init__(self, params: PolicyParameters, batch_size: int = 64, sampling: str = "fifo",
                 replay_capacity: int = 10000, rng=None):
        self.params = params
        self.batch_size = batch_size
        self.sampling = sampling
        self.rng = np.random.default_rng(rng)
        self.buffer: deque = deque(maxlen=None if sampling == "fifo" else replay_capacity)
        self._fresh = 0
        self.losses: list[tuple[float, float]] = []

    def __call__(self, transition) -> None:
        self.buffer.append(transition)
        self._fresh += 1
        if self.sampling == "fifo":
            if len(self.buffer) >= self.batch_size:
                batch = [self.buffer.popleft() for _ in range(self.batch_size)]
                self._update(batch)
        elif self._fresh >= self.batch_size and len(self.buffer) >= self.batch_size:
            idx = self.rng.choice(len(self.buffer), size=self.batch_size, replace=False)
            self._update([self.buffer[k] for k in idx])
            self._fresh = 0

    def _update(self, transitions) -> None:
        self.losses.append(a2c_update(self.params, Minibatch.from_transitions(transitions)))


def init_parameters(cfg: ExperimentConfig) -> PolicyParameters:
    t = cfg.trainer
    return PolicyParameters.init(
        seed=[cfg.seed, 7], hidden=t.hidden, gamma=t.gamma, lr_actor=t.lr_actor,
        lr_critic=t.lr_critic, optimizer=t.optimizer, entropy_coef=t.entropy_coef,
        target_mode=t.target_mode, target_sync_every=t.target_sync_every,
        withhold_orientation=cfg.policy == "mdg")


@dataclass
class TrainResult:
    params: PolicyParameters
    metrics: list[EpisodeMetrics]
    checkpoint: Optional[Path] = None
    metrics_csv: Optional[Path] = None


def train(cfg: ExperimentConfig, progress: Optional[Callable[[EpisodeMetrics], None]] = None
          ) -> TrainResult:
    """Train an actor-critic policy over ``cfg.trainer.episodes`` planning cycles."""
    cfg.validate()
    if cfg.policy not in TRAINABLE:
        raise ConfigurationError(f"policy: {cfg.policy!r} is not trainable (use one of {TRAINABLE})")
    params = init_parameters(cfg)
    t = cfg.trainer
    trainer = A2CTrainer(params, t.batch_size, t.sampling, t.replay_capacity,
                         rng=np.random.SeedSequence([cfg.seed, 11]))
    builder = TransitionBuilder(sink=trainer)
    scenario = Scenario(cfg)
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    metrics: list[EpisodeMetrics] = []
    last_good = params.copy()
    for ep in range(t.episodes):
        _, _, pol_ss = _episode_seeds(cfg.seed, ep)
        policy = NeuralPolicy(params, mode="sample", rng=pol_ss)
        try:
            m = run_episode(cfg, policy, ep, builder=builder, scenario=scenario)
        except TrainingError:
            if out is not None:
                save_checkpoint(last_good, out / "checkpoint_last_good.json")
                write_metrics_csv(metrics, out / "metrics.csv", t.record_wall_clock)
            raise
        metrics.append(m)
        last_good = params.copy()
        log.info("episode %d completion=%.4f reward=%.1f wall=%.2fs",
                 ep, m.completion_rate, m.cum_reward, m.wall_s)
        if progress is not None:
            progress(m)

    result = TrainResult(params, metrics)
    if out is not None:
        result.checkpoint = save_checkpoint(params, out / "checkpoint.json")
        result.metrics_csv = write_metrics_csv(metrics, out / "metrics.csv", t.record_wall_clock)
    return result


# -- evaluation ---------------------------------------------------------------

PolicySource = Union[str, Path, PolicyParameters]


def make_policy(source: PolicySource, mode: str = "greedy", rng=None):
    if isinstance(source, PolicyParameters):
        return NeuralPolicy(source, mode, rng)
    if source == "spg":
        return SPGPolicy()
    if source == "ltg":
        return LTGPolicy()
    if source in TRAINABLE:
        raise ConfigurationError(f"policy {source!r} needs a checkpoint")
    return NeuralPolicy(load_checkpoint(source), mode, rng)


def evaluate(source: PolicySource, cfg: ExperimentConfig, episode: int = 0,
             scenario: Optional[Scenario] = None, trace_path=None) -> EpisodeMetrics:
    """One greedy, update-free planning cycle."""
    cfg.validate()
    return run_episode(cfg, make_policy(source), episode, scenario=scenario,
                       trace_path=trace_path)


def evaluate_series(source: PolicySource, cfg: ExperimentConfig, episodes: Sequence[int],
                    ) -> list[EpisodeMetrics]:
    scenario = Scenario(cfg)
    policy = make_policy(source)
    return [run_episode(cfg, policy, ep, scenario=scenario) for ep in episodes]


def _rates(cfg, policy, episodes, scenario, run_id, trace_dir) -> list[float]:
    rates = []
    for ep in episodes:
        trace = None
        if trace_dir is not None:
            trace = Path(trace_dir) / f"{run_id}-ep{ep}.jsonl"
        rates.append(run_episode(cfg, policy, ep, scenario=scenario,
                                 trace_path=trace).completion_rate)
    return rates


def sweep_load(cfg: ExperimentConfig, load_points: Sequence[int],
               policies: Mapping[str, PolicySource], episodes: Sequence[int] = (0,),
               out_csv=None, trace_dir=None) -> list[dict]:
    """Completion rate per (load, policy), averaged over ``episodes``.

    Each row carries a run id; with ``trace_dir`` the per-episode decision
    traces are stored as ``<run_id>-ep<k>.jsonl``.
    """
    if len(load_points) < 2:
        raise ConfigurationError("sweep_load needs at least two load points")
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    rows = []
    for load in load_points:
        lcfg = cfg.replace(traffic=dataclasses.replace(cfg.traffic, per_leo_count=int(load)))
        scenario = Scenario(lcfg)
        for name, src in policies.items():
            run_id = f"load{int(load)}-{name}-s{cfg.seed}"
            rates = _rates(lcfg, make_policy(src), episodes, scenario, run_id, trace_dir)
            rows.append({"load": int(load), "policy": name,
                         "completion_rate": float(np.mean(rates)), "run_id": run_id})
    if out_csv is not None:
        write_rows(rows, out_csv, LOAD_COLUMNS)
    return rows


def scale_config(template: ExperimentConfig, planes: int, sats_per_plane: int,
                 altitude_km: float = 550.0, inclination_deg: float = 53.0) -> ExperimentConfig:
    """``template`` on a Walker shell of the given shape; other settings are kept."""
    spec = ConstellationSpec.walker(planes, sats_per_plane, altitude_km, inclination_deg)
    return template.replace(constellation=spec)


def sweep_scale(template: ExperimentConfig, scales: Sequence[tuple[int, int]],
                policies: Mapping[str, PolicySource], episodes: Sequence[int] = (0,),
                reference: str = "tf-darm", out_csv=None, trace_dir=None,
                altitude_km: float = 550.0, inclination_deg: float = 53.0) -> list[dict]:
    """Completion rate per (scale, policy) plus each baseline's minimum gap to ``reference``.

    The per-LEO request count is kept fixed, so total traffic grows with the
    number of satellites (and with the link capacity).
    """
    labels = [f"{p}*{s}" for p, s in scales]
    table = {name: {} for name in policies}
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    for (p, s), label in zip(scales, labels):
        scfg = scale_config(template, p, s, altitude_km, inclination_deg)
        scenario = Scenario(scfg)
        for name, src in policies.items():
            run_id = f"scale{p}x{s}-{name}-s{template.seed}"
            table[name][label] = float(np.mean(
                _rates(scfg, make_policy(src), episodes, scenario, run_id, trace_dir)))
    rows = []
    for name in policies:
        row = {"policy": name, **table[name], "run_id": f"scale-{name}-s{template.seed}"}
        if reference in table and name != reference:
            row["min_gain"] = min(table[reference][l] - table[name][l] for l in labels)
        else:
            row["min_gain"] = None
        rows.append(row)
    if out_csv is not None:
        write_rows(rows, out_csv, ("policy", *labels, "min_gain", "run_id"))
    return rows


# -- files --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_rows(rows: Sequence[Mapping], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            if v == "":
                conv[k] = None
                continue
            try:
                conv[k] = int(v)
            except ValueError:
                try:
                    conv[k] = float(v)
                except ValueError:
                    conv[k] = v
        out.append(conv)
    return out


def write_metrics_csv(metrics: Sequence[EpisodeMetrics], path, wall_clock: bool = True) -> Path:
    """Write per-episode metrics; with ``wall_clock=False`` the timing column is 0."""
    rows = []
    for m in metrics:
        r = m.row()
        r["wall_s"] = round(r["wall_s"], 3) if wall_clock else 0.0
        rows.append(r)
    return write_rows(rows, path, METRICS_COLUMNS)


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if window <= 1 or v.size == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for k in range(v.size):
        lo = max(0, k - window + 1)
        out[k] = (c[k + 1] - c[lo]) / (k + 1 - lo)
    return out


def episodes_to_fraction(rates: Sequence[float], fraction: float = 0.9, final_window: int = 20,
                         smooth: int = 10) -> int:
    """First episode whose smoothed rate reaches ``fraction`` of the final-window mean."""
    r = np.asarray(rates, dtype=float)
    final = r[-final_window:].mean()
    s = smoothed(r, smooth)
    hits = np.flatnonzero(s >= fraction * final)
    return int(hits[0]) if hits.size else len(r)


# -- plots --------------------------------------------------------------------

def plot_metrics(csv_paths: Mapping[str, Any], out_png, window: int = 10) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, path in csv_paths.items():
        rows = read_rows(path)
        ax.plot([r["episode"] for r in rows],
                smoothed([r["completion_rate"] for r in rows], window), label=name)
    ax.set_xlabel("episode")
    ax.set_ylabel("service completion rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_load(csv_path, out_png) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_rows(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in dict.fromkeys(r["policy"] for r in rows):
        pts = [(r["load"], r["completion_rate"]) for r in rows if r["policy"] == name]
        ax.plot(*zip(*pts), marker="o", label=name)
    ax.set_xlabel("requests per LEO")
    ax.set_ylabel("service completion rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
