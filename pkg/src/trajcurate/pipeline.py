"""Stage functions chaining segmentation, retrieval, weighting and sampling."""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .config import PipelineConfig
from .errors import TrajcurateError
from .retrieval import LANGUAGE, RetrievedSet, retrieve_language, retrieve_modality
from .sampler import build_augmented, config_hash, export_manifest, sample_stream
from .segmenter import Segment, SegmenterConfig, segment_dataset
from .trajstore import Dataset, load_dataset, validate_pairing
from .weighting import (
    ModalityScore,
    ModalityWeights,
    default_schedule,
    estimate_weights,
    load_external_scores,
    softmax_weights,
)

log = logging.getLogger("trajcurate")


class StageError(TrajcurateError):
    """Wraps a failure with the name of the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str, **fields):
    log.info(json.dumps({"event": "stage_start", "stage": name, **fields}, sort_keys=True))
    t0 = time.perf_counter()
    try:
        yield
    except Exception as exc:
        log.error(json.dumps({"event": "stage_failed", "stage": name, "error": str(exc)}, sort_keys=True))
        raise StageError(name, exc) from exc
    log.info(
        json.dumps(
            {"event": "stage_end", "stage": name, "seconds": round(time.perf_counter() - t0, 6), **fields},
            sort_keys=True,
        )
    )


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(obj), encoding="utf-8")
    return path


def versions() -> dict:
    import numba
    import scipy

    return {
        "trajcurate": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "scipy": scipy.__version__,
    }


# ---------------------------------------------------------------------------
# stages


def segment_target(target: Dataset, cfg: PipelineConfig) -> list[Segment]:
    return segment_dataset(target, SegmenterConfig(cfg.epsilon, cfg.min_length))


def segments_doc(segments: Sequence[Segment], cfg_hash: str | None = None) -> dict:
    by_traj: dict = {}
    for s in segments:
        by_traj.setdefault(s.trajectory_id, []).append([s.start, s.end])
    doc = {"segments": by_traj}
    if cfg_hash:
        doc["config_hash"] = cfg_hash
    return doc


def segments_from_doc(doc: Mapping) -> list[Segment]:
    return [Segment(tid, int(s), int(e)) for tid, spans in doc["segments"].items() for s, e in spans]


def retrieve_all(
    target: Dataset,
    prior: Dataset,
    segments: Sequence[Segment],
    modalities: Sequence[str],
    k: int = 100,
    metric: str = "l2",
    normalize: bool = False,
    threads: int | None = None,
) -> dict[str, RetrievedSet]:
    return {
        m: retrieve_modality(target, prior, segments, m, k, metric, normalize=normalize, threads=threads)
        for m in modalities
    }


def subtrajectory_modalities(target: Dataset, prior: Dataset, cfg: PipelineConfig) -> list[str]:
    report = validate_pairing(target, prior)
    if cfg.modalities is None:
        return [m for m in report.shared_modalities]
    missing = [m for m in cfg.modalities if m != LANGUAGE and m not in report.shared_modalities]
    if missing:
        raise ValueError(f"modalities not shared by target and prior: {missing}")
    return [m for m in cfg.modalities if m != LANGUAGE]


def wants_language(target: Dataset, prior: Dataset, cfg: PipelineConfig) -> bool:
    if cfg.modalities is not None and LANGUAGE not in cfg.modalities:
        return False
    if not cfg.language:
        return False
    available = validate_pairing(target, prior).language_available
    if not available and cfg.modalities is not None:
        raise ValueError("language retrieval requested but instruction embeddings are missing")
    return available


def run_retrieval(
    target: Dataset, prior: Dataset, segments: Sequence[Segment], cfg: PipelineConfig
) -> dict[str, RetrievedSet]:
    names = subtrajectory_modalities(target, prior, cfg)
    out = retrieve_all(target, prior, segments, names, cfg.k, cfg.metric, cfg.normalize, cfg.threads)
    if wants_language(target, prior, cfg):
        budget = cfg.frame_budget
        if budget is None and names:
            budget = out[names[0]].total_frames or None
        out[LANGUAGE] = retrieve_language(target, prior, cfg.language_threshold, budget)
    return out


def retrieved_jsonl(rset: RetrievedSet, cfg_hash: str | None = None) -> str:
    header = {
        "header": {
            "modality": rset.modality,
            "matches": len(rset.matches),
            "total_frames": rset.total_frames,
            "exhausted": rset.exhausted,
            "status": rset.status,
            "config_hash": cfg_hash,
        }
    }
    return json.dumps(header, sort_keys=True) + "\n" + rset.to_jsonl()


def write_retrieved(sets: Mapping[str, RetrievedSet], outdir: Path, cfg_hash: str | None = None) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m, rset in sets.items():
        p = outdir / f"{m}.jsonl"
        p.write_text(retrieved_jsonl(rset, cfg_hash), encoding="utf-8")
        paths.append(p)
    return paths


def read_retrieved(path: Path) -> RetrievedSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0]).get("header") if lines else None
    if header is None:
        return RetrievedSet.from_jsonl(Path(path).stem, "\n".join(lines))
    rset = RetrievedSet.from_jsonl(header["modality"], "\n".join(lines[1:]))
    rset.exhausted = bool(header.get("exhausted", False))
    rset.status = header.get("status", rset.status)
    return rset


def read_retrieved_dir(path: Path) -> dict[str, RetrievedSet]:
    files = sorted(Path(path).glob("*.jsonl"))
    if not files:
        raise FileNotFoundError(f"no retrieval outputs (*.jsonl) in {path}")
    return {f.stem: read_retrieved(f) for f in files}


def run_weighting(
    retrieved: Mapping[str, RetrievedSet], target: Dataset, prior: Dataset, cfg: PipelineConfig
) -> tuple[ModalityWeights, dict[str, ModalityScore]]:
    if cfg.scorer.kind == "external":
        scores = load_external_scores(cfg.scorer.external_path)
        missing = sorted(set(retrieved) - set(scores))
        if missing:
            raise ValueError(f"external scores missing modalities {missing}")
        scores = {m: scores[m] for m in retrieved}
        return softmax_weights({m: s.score for m, s in scores.items()}, cfg.temperature), scores
    schedule = default_schedule(cfg.num_checkpoints, cfg.retained_checkpoints)
    scorer_cfg = {**cfg.scorer.factory_kwargs(), "num_checkpoints": cfg.num_checkpoints}
    return estimate_weights(retrieved, target, prior, cfg.temperature, scorer_cfg, cfg.seed, schedule)


def weights_doc(weights: ModalityWeights, scores: Mapping[str, ModalityScore], cfg_hash=None) -> dict:
    doc = weights.to_dict()
    doc["checkpoint_scores"] = {m: list(s.checkpoint_scores) for m, s in scores.items()}
    if cfg_hash:
        doc["config_hash"] = cfg_hash
    return doc


def build_stream(retrieved, target, weights, cfg: PipelineConfig):
    augmented = {m: build_augmented(retrieved[m], target, cfg.h) for m in weights.weights}
    return sample_stream(augmented, weights, cfg.batch_size, cfg.num_batches, cfg.seed, uniform=cfg.uniform)


def modality_counts(stream) -> dict[str, int]:
    counts = np.zeros(len(stream.modalities), dtype=np.int64)
    for mod, _ in stream.draw_indices():
        counts += np.bincount(mod, minlength=len(stream.modalities))
    return {m: int(c) for m, c in zip(stream.modalities, counts)}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(
    cfg: PipelineConfig,
    target: Dataset | None = None,
    prior: Dataset | None = None,
    output_dir: str | Path | None = None,
    extra_manifest: Mapping | None = None,
) -> dict:
    """Run every stage and write artifacts under ``output_dir``.

    Artifacts written before a failing stage are kept; the failure surfaces as
    :class:`StageError` naming the stage.
    """
    out = Path(output_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cfg.hashable())
    artifacts: list[Path] = []
    result: dict = {"config_hash": cfg_hash}

    with stage("load"):
        target = target if target is not None else load_dataset(cfg.target)
        prior = prior if prior is not None else load_dataset(cfg.prior)
        validate_pairing(target, prior)

    with stage("segment"):
        segments = segment_target(target, cfg)
        artifacts.append(write_json(out / "segments.json", segments_doc(segments, cfg_hash)))
    result["segments"] = segments

    with stage("retrieve"):
        retrieved = run_retrieval(target, prior, segments, cfg)
        artifacts += write_retrieved(retrieved, out / "retrieved", cfg_hash)
    result["retrieved"] = retrieved

    with stage("weigh"):
        weights, scores = run_weighting(retrieved, target, prior, cfg)
        artifacts.append(write_json(out / "weights.json", weights_doc(weights, scores, cfg_hash)))
    result["weights"], result["scores"] = weights, scores

    with stage("sample"):
        stream = build_stream(retrieved, target, weights, cfg)
        artifacts.append(export_manifest(stream, out / "samples.jsonl", {"config_hash": cfg_hash}))
    result["stream"] = stream

    manifest = {
        "config": cfg.hashable(),
        "config_hash": cfg_hash,
        "versions": versions(),
        "seeds": {"scorer": cfg.seed, "sampler": cfg.seed},
        "artifacts": {str(p.relative_to(out)): _sha256(p) for p in artifacts},
        **(extra_manifest or {}),
    }
    write_json(out / "run_manifest.json", manifest)
    result["manifest"] = manifest
    return result
