"""Synthetic multi-task worlds with known task labels, and quality metrics.

Every task owns an end-effector route through a few waypoints, with full
stops between phases, and a linear action map. Each embedding modality is
``center[task] + curve(phase) + noise``: the curve is shared by all tasks, so
only the centers carry task identity. An uninformative modality gives every
task the same center, which makes it retrieve similar-looking motion from
unrelated tasks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .retrieval import LANGUAGE, RetrievedSet
from .trajstore import Dataset, Trajectory


@dataclass(frozen=True)
class ModalityConfig:
    name: str
    dim: int = 16
    informative: bool = True


@dataclass(frozen=True)
class WorldConfig:
    num_tasks: int = 5
    trajectories_per_task: int = 60
    target_demos: int = 5
    target_task: int = 0
    phases: int = 3
    phase_frames: tuple = (20, 40)
    pause_frames: tuple = (3, 6)
    modalities: tuple = (ModalityConfig("visual", 16, True), ModalityConfig("motion", 16, False))
    cluster_separation: float = 10.0
    noise_std: float = 1.0
    signal_scale: float = 1.0
    language_dim: int = 32
    action_dim: int = 2
    action_noise: float = 0.01
    waypoint_jitter: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 2:
            raise ValueError("a world needs at least 2 tasks")
        if self.cluster_separation < 0:
            raise ValueError("cluster_separation must be >= 0")
        if not 0 <= self.target_task < self.num_tasks:
            raise ValueError("target_task out of range")
        if self.phases < 1 or self.trajectories_per_task < 1 or self.target_demos < 1:
            raise ValueError("phases, trajectories_per_task and target_demos must be positive")
        lo, hi = self.phase_frames
        if not 1 <= lo <= hi:
            raise ValueError("phase_frames must satisfy 1 <= lo <= hi")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names) or LANGUAGE in names:
            raise ValueError(f"modality names must be unique and not {LANGUAGE!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldConfig":
        d = dict(d)
        if "modalities" in d:
            d["modalities"] = tuple(
                m if isinstance(m, ModalityConfig) else ModalityConfig(**m) for m in d["modalities"]
            )
        for key in ("phase_frames", "pause_frames"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_frames"] = list(self.phase_frames)
        d["pause_frames"] = list(self.pause_frames)
        return d


@dataclass
class World:
    target: Dataset
    prior: Dataset
    labels: dict
    config: WorldConfig


def _centers(rng, num_tasks, dim, separation, noise_std):
    # pairwise distance between centers is separation * noise_std
    radius = separation * noise_std / np.sqrt(2.0)
    if dim >= num_tasks:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_tasks)))
        return radius * q.T
    z = rng.standard_normal((num_tasks, dim))
    return radius * z / np.linalg.norm(z, axis=1, keepdims=True)


def _curve(rng, dim, scale, harmonics=3):
    amp = rng.standard_normal((harmonics, dim)) * scale / np.sqrt(harmonics)
    phase = rng.uniform(0.0, 2.0 * np.pi, (harmonics, dim))
    freq = np.arange(1, harmonics + 1)[:, None]

    def g(phi):
        phi = np.asarray(phi, dtype=np.float64)[:, None, None]
        return (amp * np.sin(2.0 * np.pi * freq * phi + phase)).sum(axis=1)

    return g


def _waypoints(rng, phases, min_l1=0.4):
    pts = [rng.uniform(0.0, 0.6, 3)]
    while len(pts) < phases + 1:
        cand = rng.uniform(0.0, 0.6, 3)
        if np.abs(cand - pts[-1]).sum() >= min_l1:
            pts.append(cand)
    return np.array(pts)


def _route(rng, cfg: WorldConfig, waypoints):
    """End-effector positions and phase value per frame."""
    wp = waypoints + rng.uniform(-cfg.waypoint_jitter, cfg.waypoint_jitter, waypoints.shape)
    pos = [wp[0]]
    phi = [0.0]
    P = cfg.phases
    for p in range(P):
        L = int(rng.integers(cfg.phase_frames[0], cfg.phase_frames[1] + 1))
        for t in range(1, L + 1):
            pos.append(wp[p] + (wp[p + 1] - wp[p]) * t / L)
            phi.append((p + t / L) / P)
        if p < P - 1:
            for _ in range(int(rng.integers(cfg.pause_frames[0], cfg.pause_frames[1] + 1))):
                pos.append(pos[-1])
                phi.append(phi[-1])
    return np.array(pos), np.array(phi)


def generate_world(config: WorldConfig | None = None) -> World:
    """Deterministically build target and prior datasets plus task labels."""
    cfg = config or WorldConfig()
    rng = np.random.default_rng(cfg.seed)
    T = cfg.num_tasks
    routes = [_waypoints(rng, cfg.phases) for _ in range(T)]
    state_dim = 4
    maps = rng.standard_normal((T, cfg.action_dim, state_dim))
    offsets = rng.standard_normal((T, cfg.action_dim))
    mods = []
    for m in cfg.modalities:
        sep = cfg.cluster_separation if m.informative else 0.0
        mods.append((m, _centers(rng, T, m.dim, sep, cfg.noise_std), _curve(rng, m.dim, cfg.signal_scale)))
    if cfg.language_dim:
        lang = rng.standard_normal((T, cfg.language_dim))
        lang /= np.linalg.norm(lang, axis=1, keepdims=True)
    else:
        lang = None

    def make(tid, task, trng):
        pos, phi = _route(trng, cfg, routes[task])
        n = len(pos)
        states = np.column_stack([pos, phi])
        actions = states @ maps[task].T + offsets[task] + cfg.action_noise * trng.standard_normal((n, cfg.action_dim))
        emb = {}
        for m, centers, g in mods:
            emb[m.name] = centers[task] + g(phi) + cfg.noise_std * trng.standard_normal((n, m.dim))
        return Trajectory(
            id=tid,
            ee_positions=pos,
            states=states,
            actions=actions,
            embeddings=emb,
            instruction=f"complete task {task}",
            instruction_embedding=None if lang is None else lang[task],
        )

    seeds = rng.integers(0, 2**63 - 1, size=cfg.target_demos + T * cfg.trajectories_per_task)
    labels = {}
    target_trajs = []
    for i in range(cfg.target_demos):
        tid = f"target_{i:03d}"
        target_trajs.append(make(tid, cfg.target_task, np.random.default_rng(seeds[i])))
        labels[tid] = cfg.target_task
    prior_trajs = []
    k = cfg.target_demos
    for task in range(T):
        for i in range(cfg.trajectories_per_task):
            tid = f"prior_t{task:02d}_{i:04d}"
            prior_trajs.append(make(tid, task, np.random.default_rng(seeds[k])))
            labels[tid] = task
            k += 1
    mod_dims = [(m.name, m.dim) for m in cfg.modalities]
    language_dim = cfg.language_dim or None
    target = Dataset.from_trajectories("target", target_trajs, modalities=mod_dims, language_dim=language_dim)
    prior = Dataset.from_trajectories("prior", prior_trajs, modalities=mod_dims, language_dim=language_dim)
    return World(target, prior, labels, cfg)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    precision: dict = field(default_factory=dict)
    match_precision: dict = field(default_factory=dict)
    most_precise: str | None = None
    weight_argmax: str | None = None
    weight_ranking_correct: bool | None = None
    sampler_frequencies: dict = field(default_factory=dict)
    sampler_max_deviation: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        lines = [f"{'modality':<12}{'precision':>11}{'match prec':>12}{'weight':>9}{'sampled':>9}"]
        for m, p in self.precision.items():
            w = self.sampler_frequencies.get(m, {})
            lines.append(
                f"{m:<12}{p:>11.3f}{self.match_precision.get(m, float('nan')):>12.3f}"
                f"{w.get('weight', float('nan')):>9.3f}{w.get('empirical', float('nan')):>9.3f}"
            )
        lines.append(f"most precise: {self.most_precise}  weight argmax: {self.weight_argmax}  "
                     f"agree: {self.weight_ranking_correct}")
        if self.sampler_max_deviation is not None:
            lines.append(f"sampler max |freq - weight|: {self.sampler_max_deviation:.4f}")
        return "\n".join(lines)


def _query_task(match, labels, default_task):
    if match.query is not None:
        return labels[match.query.trajectory_id]
    return default_task


def retrieval_precision(rset: RetrievedSet, labels: Mapping[str, int], target_task: int) -> tuple[float, float]:
    """Frame-weighted and match-weighted fraction of retrieved data from the right task."""
    if not rset.matches:
        return 0.0, 0.0
    good_frames = total_frames = good = 0
    for m in rset.matches:
        ok = labels[m.prior_trajectory_id] == _query_task(m, labels, target_task)
        total_frames += m.length
        good_frames += m.length if ok else 0
        good += ok
    return good_frames / total_frames, good / len(rset.matches)


def evaluate(
    target: Dataset,
    labels: Mapping[str, int],
    retrieved: Mapping[str, RetrievedSet],
    weights=None,
    sample_counts: Mapping[str, int] | None = None,
) -> EvalReport:
    """Score retrieval against generator labels and check weights and sampler."""
    tasks = [labels[t.id] for t in target]
    target_task = max(set(tasks), key=tasks.count)
    report = EvalReport()
    for m, rset in retrieved.items():
        report.precision[m], report.match_precision[m] = retrieval_precision(rset, labels, target_task)
    if report.precision:
        report.most_precise = max(report.precision, key=lambda m: report.precision[m])
    if weights is not None:
        report.weight_argmax = weights.argmax()
        if report.most_precise is not None:
            report.weight_ranking_correct = report.weight_argmax == report.most_precise
    if sample_counts and weights is not None:
        total = sum(sample_counts.values())
        dev = 0.0
        for m, w in weights.weights.items():
            emp = sample_counts.get(m, 0) / total if total else 0.0
            report.sampler_frequencies[m] = {"weight": w, "empirical": emp}
            dev = max(dev, abs(emp - w))
        report.sampler_max_deviation = dev
    return report


def sweep_separation(
    separations: Sequence[float], seeds: Sequence[int], base: WorldConfig | None = None, **retrieve_kwargs
) -> dict:
    """Mean frame precision of the first modality per separation value."""
    from .pipeline import retrieve_all
    from .segmenter import SegmenterConfig, segment_dataset

    base = base or WorldConfig()
    out = {}
    for sep in separations:
        vals = []
        for s in seeds:
            cfg = WorldConfig.from_dict({**base.to_dict(), "cluster_separation": sep, "seed": s, "language_dim": 0})
            world = generate_world(cfg)
            segs = segment_dataset(world.target, SegmenterConfig())
            name = cfg.modalities[0].name
            rsets = retrieve_all(world.target, world.prior, segs, [name], **retrieve_kwargs)
            vals.append(retrieval_precision(rsets[name], world.labels, cfg.target_task)[0])
        out[sep] = float(np.mean(vals))
    return out


def run_bench(world_config: WorldConfig, pipeline_config, output_dir) -> EvalReport:
    """Generate a world, run the full pipeline on it and score the outcome."""
    from pathlib import Path

    from .pipeline import dump_json, modality_counts, run_pipeline, stage
    from .trajstore import write_dataset

    out = Path(output_dir)
    with stage("generate", seed=world_config.seed):
        world = generate_world(world_config)
        write_dataset(world.target, out / "target")
        write_dataset(world.prior, out / "prior")
        (out / "labels.json").write_text(dump_json(world.labels), encoding="utf-8")
    result = run_pipeline(
        pipeline_config,
        world.target,
        world.prior,
        out,
        extra_manifest={"world": world_config.to_dict()},
    )
    with stage("evaluate"):
        report = evaluate(
            world.target,
            world.labels,
            result["retrieved"],
            result["weights"],
            modality_counts(result["stream"]),
        )
        doc = {"config_hash": result["config_hash"], "world": world_config.to_dict(), **report.to_dict()}
        (out / "eval_report.json").write_text(dump_json(doc), encoding="utf-8")
        (out / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    return report
