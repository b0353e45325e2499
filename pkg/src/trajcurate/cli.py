"""Segment, retrieve, weigh and sample robot demonstrations from a prior corpus.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PRESETS, PipelineConfig
from .errors import (
    ConfigurationError,
    DatasetIOError,
    EmptyAugmentedError,
    FormatError,
    IncompatibleDatasetsError,
    NoDataError,
    ValidationError,
)
from .pipeline import (
    StageError,
    build_stream,
    dump_json,
    read_retrieved_dir,
    run_pipeline,
    run_retrieval,
    run_weighting,
    segment_target,
    segments_doc,
    segments_from_doc,
    weights_doc,
    write_json,
    write_retrieved,
)
from .retrieval import METRICS, THREADS_ENV
from .sampler import config_hash, export_manifest
from .trajstore import load_dataset, write_dataset
from .weighting import ModalityWeights

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DATA_ERRORS = (
    FormatError,
    ValidationError,
    DatasetIOError,
    IncompatibleDatasetsError,
    NoDataError,
    EmptyAugmentedError,
)


class _JsonLogFormatter(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except ValueError:
            payload = {"message": msg}
        payload = {"level": record.levelname.lower(), "logger": record.name, **payload}
        return json.dumps(payload, sort_keys=True)


def _setup_logging(verbosity: int, log_file: str | None):
    root = logging.getLogger()
    root.handlers.clear()
    handler = logging.FileHandler(log_file) if log_file else logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLogFormatter())
    root.addHandler(handler)
    root.setLevel(logging.WARNING - 10 * min(verbosity, 2))


# ---------------------------------------------------------------------------
# argument groups


def _add_common(p):
    p.add_argument("--config", help="JSON config file; command-line flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS), help="sim (eps 5e-3, tau 2) or real (eps 2e-3, tau 10)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for stage logs, -vv for debug")
    p.add_argument("--log-file", help="write JSON-lines logs here instead of stderr")


def _add_datasets(p, prior=True):
    p.add_argument("--target", help="target dataset directory")
    if prior:
        p.add_argument("--prior", help="prior dataset directory")


def _add_segment(p):
    p.add_argument("--epsilon", type=float, help="pause velocity threshold (default 5e-3)")
    p.add_argument("--min-length", type=int, help="minimum segment length after merging (default 20)")


def _add_retrieve(p):
    p.add_argument("--modalities", help="comma-separated modality list; 'language' enables language retrieval")
    p.add_argument("--k", type=int, help="matches kept per target segment (default 100)")
    p.add_argument("--metric", choices=METRICS, help="frame distance (default l2)")
    p.add_argument("--normalize", action="store_true", default=None, help="L2-normalize embeddings per frame")
    p.add_argument("--no-language", dest="language", action="store_false", default=None,
                   help="skip instruction-similarity retrieval")
    p.add_argument("--language-threshold", type=float, help="cosine similarity cutoff (default 0.90)")
    p.add_argument("--frame-budget", type=int,
                   help="frames for language retrieval (default: frames retrieved by the first modality)")
    p.add_argument("--threads", type=int, help=f"worker threads, 0 = all cores (default ${THREADS_ENV} or 0)")


def _add_weigh(p):
    p.add_argument("--temperature", "--tau", dest="temperature", type=float, help="softmax temperature (default 2)")
    p.add_argument("--scorer", help="knn-gaussian or external:<scores.json>")
    p.add_argument("--knn-k", type=int, help="neighbours used by the knn-gaussian scorer (default 16)")
    p.add_argument("--scoring-modality", help="feature space for neighbour lookup (default: state)")
    p.add_argument("--variance-floor", type=float, help="minimum per-dimension action variance (default 1e-4)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")


def _add_sample(p):
    p.add_argument("--h", type=int, help="window length in frames (default 10)")
    p.add_argument("--batch-size", type=int, help="records per batch (default 32)")
    p.add_argument("--num-batches", type=int, help="number of batches (default 1000)")
    p.add_argument("--uniform", action="store_true", default=None,
                   help="ignore weights and sample modalities uniformly")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajcurate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="split target demonstrations at pauses")
    _add_common(p)
    _add_datasets(p, prior=False)
    _add_segment(p)
    p.add_argument("--output", help="output JSON file (default: stdout)")

    p = sub.add_parser("retrieve", help="per-modality S-DTW and language retrieval")
    _add_common(p)
    _add_datasets(p)
    _add_segment(p)
    _add_retrieve(p)
    p.add_argument("--segments", help="segments JSON from `segment` (default: segment on the fly)")
    p.add_argument("--output", required=True, help="output directory for <modality>.jsonl files")

    p = sub.add_parser("weigh", help="estimate modality weights from retrieval outputs")
    _add_common(p)
    _add_datasets(p)
    _add_weigh(p)
    p.add_argument("--retrieved", required=True, help="directory of retrieval .jsonl files")
    p.add_argument("--output", help="output JSON file (default: stdout)")

    p = sub.add_parser("sample", help="emit an importance-sampled window manifest")
    _add_common(p)
    _add_datasets(p, prior=False)
    _add_sample(p)
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--retrieved", required=True, help="directory of retrieval .jsonl files")
    p.add_argument("--weights", help="weights JSON from `weigh` (required unless --uniform)")
    p.add_argument("--output", required=True, help="output JSON-lines manifest")

    p = sub.add_parser("pipeline", help="segment, retrieve, weigh and sample in one run")
    _add_common(p)
    _add_datasets(p)
    _add_segment(p)
    _add_retrieve(p)
    _add_weigh(p)
    _add_sample(p)
    p.add_argument("--output", required=True, help="output directory")

    p = sub.add_parser("generate", help="write a synthetic target/prior world")
    _add_world(p)
    p.add_argument("--output", required=True, help="output directory (target/, prior/, labels.json)")

    p = sub.add_parser("bench", help="generate a synthetic world, run the pipeline and evaluate it")
    _add_common(p)
    _add_world(p)
    _add_segment(p)
    _add_retrieve(p)
    _add_weigh(p)
    _add_sample(p)
    p.add_argument("--output", required=True, help="output directory")
    return parser


def _add_world(p):
    p.add_argument("--world-seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--num-tasks", type=int, default=5)
    p.add_argument("--per-task", type=int, default=60, help="prior trajectories per task")
    p.add_argument("--separation", type=float, default=10.0, help="cluster separation in noise-std units")
    p.add_argument("--language-dim", type=int, default=32, help="instruction embedding dim, 0 disables")
    if not any(a.dest == "verbose" for a in p._actions):
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--log-file")


# ---------------------------------------------------------------------------


_FLAG_FIELDS = {
    "target": "target",
    "prior": "prior",
    "epsilon": "epsilon",
    "min_length": "min_length",
    "k": "k",
    "metric": "metric",
    "normalize": "normalize",
    "language": "language",
    "language_threshold": "language_threshold",
    "frame_budget": "frame_budget",
    "threads": "threads",
    "temperature": "temperature",
    "seed": "seed",
    "h": "h",
    "batch_size": "batch_size",
    "num_batches": "num_batches",
    "uniform": "uniform",
}


def config_from_args(args) -> PipelineConfig:
    overrides = {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "modalities", None):
        overrides["modalities"] = tuple(m.strip() for m in args.modalities.split(",") if m.strip())
    preset = getattr(args, "preset", None)
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config, preset=preset)
    elif preset:
        cfg = PipelineConfig.preset(preset)
    else:
        cfg = PipelineConfig()
    scorer = cfg.scorer
    spec = getattr(args, "scorer", None)
    if spec:
        if spec == "knn-gaussian":
            scorer = replace(scorer, kind="knn-gaussian", external_path=None)
        elif spec.startswith("external:"):
            scorer = replace(scorer, kind="external", external_path=spec[len("external:"):])
        else:
            raise ConfigurationError(f"scorer: expected knn-gaussian or external:<path>, got {spec!r}")
    for flag, name in (("knn_k", "k"), ("scoring_modality", "scoring_modality"), ("variance_floor", "variance_floor")):
        value = getattr(args, flag, None)
        if value is not None:
            scorer = replace(scorer, **{name: value})
    overrides["scorer"] = scorer
    return cfg.replace(**overrides)


def _require_path(value, flag):
    if value is None:
        raise ConfigurationError(f"{flag}: path is required")
    if not Path(value).exists():
        raise ConfigurationError(f"{flag}: path does not exist: {value}")
    return value


def _emit(text: str, output: str | None):
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_segment(args):
    cfg = config_from_args(args).validate(require_paths=False)
    target = load_dataset(_require_path(cfg.target, "--target"))
    segs = segment_target(target, cfg)
    _emit(dump_json(segments_doc(segs, config_hash(cfg.hashable()))), args.output)


def cmd_retrieve(args):
    cfg = config_from_args(args).validate()
    target, prior = load_dataset(cfg.target), load_dataset(cfg.prior)
    if args.segments:
        segs = segments_from_doc(json.loads(Path(_require_path(args.segments, "--segments")).read_text()))
    else:
        segs = segment_target(target, cfg)
    sets = run_retrieval(target, prior, segs, cfg)
    write_retrieved(sets, Path(args.output), config_hash(cfg.hashable()))


def cmd_weigh(args):
    cfg = config_from_args(args).validate()
    target, prior = load_dataset(cfg.target), load_dataset(cfg.prior)
    retrieved = read_retrieved_dir(Path(_require_path(args.retrieved, "--retrieved")))
    weights, scores = run_weighting(retrieved, target, prior, cfg)
    _emit(dump_json(weights_doc(weights, scores, config_hash(cfg.hashable()))), args.output)


def cmd_sample(args):
    cfg = config_from_args(args).validate(require_paths=False)
    target = load_dataset(_require_path(cfg.target, "--target"))
    retrieved = read_retrieved_dir(Path(_require_path(args.retrieved, "--retrieved")))
    if args.weights:
        weights = ModalityWeights.from_dict(json.loads(Path(_require_path(args.weights, "--weights")).read_text()))
    elif cfg.uniform:
        weights = ModalityWeights.uniform(list(retrieved))
    else:
        raise ConfigurationError("--weights: required unless --uniform is given")
    stream = build_stream({m: retrieved[m] for m in weights.weights}, target, weights, cfg)
    export_manifest(stream, args.output, {"config_hash": config_hash(cfg.hashable())})


def cmd_pipeline(args):
    cfg = config_from_args(args).validate()
    run_pipeline(cfg, output_dir=args.output)


def _world_config(args):
    from .synthbench import WorldConfig

    return WorldConfig(
        num_tasks=args.num_tasks,
        trajectories_per_task=args.per_task,
        cluster_separation=args.separation,
        language_dim=args.language_dim,
        seed=args.world_seed,
    )


def cmd_generate(args):
    from .synthbench import generate_world

    world = generate_world(_world_config(args))
    out = Path(args.output)
    write_dataset(world.target, out / "target")
    write_dataset(world.prior, out / "prior")
    write_json(out / "labels.json", world.labels)


def cmd_bench(args):
    from .synthbench import run_bench

    cfg = config_from_args(args).validate(require_paths=False)
    report = run_bench(_world_config(args), cfg, args.output)
    print(report.summary())


COMMANDS = {
    "segment": cmd_segment,
    "retrieve": cmd_retrieve,
    "weigh": cmd_weigh,
    "sample": cmd_sample,
    "pipeline": cmd_pipeline,
    "generate": cmd_generate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.log_file)
    try:
        COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        code = EXIT_DATA if isinstance(exc.cause, DATA_ERRORS + (ValueError, OSError)) else EXIT_INTERNAL
        print(f"error: {exc}", file=sys.stderr)
        return code
    except DATA_ERRORS + (OSError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
