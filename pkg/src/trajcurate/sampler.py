"""Importance-sampled training windows over the augmented per-modality pools.

Each modality's pool is its retrieved spans plus every target demonstration,
cut into all stride-1 windows of length ``h``. A draw first picks a modality
from the categorical weights, then a window uniformly inside that pool.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigurationError, EmptyAugmentedError
from .retrieval import RetrievedSet
from .trajstore import Dataset
from .weighting import ModalityWeights

DEFAULT_WINDOW = 10
TARGET = "target"
RETRIEVED = "retrieved"


@dataclass(frozen=True)
class SampleRecord:
    modality: str
    trajectory_id: str
    start: int
    end: int
    source: str
    instruction: str

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "trajectory_id": self.trajectory_id,
            "start": self.start,
            "end": self.end,
            "source": self.source,
            "instruction": self.instruction,
        }


class AugmentedSet:
    """All length-``h`` windows of one modality's retrieved spans plus the target.

    Windows are stored implicitly: span ``i`` with ``c_i`` windows owns unit
    indices ``cum[i] .. cum[i+1]-1``, and unit ``u`` starts at
    ``span_start[i] + (u - cum[i])``.
    """

    def __init__(self, modality: str, h: int, spans):
        self.modality = modality
        self.h = int(h)
        spans = list(spans)
        self.span_ids = [s[0] for s in spans]
        self.span_starts = np.array([s[1] for s in spans], dtype=np.int64)
        self.span_ends = np.array([s[2] for s in spans], dtype=np.int64)
        self.span_sources = [s[3] for s in spans]
        self.span_instructions = [s[4] for s in spans]
        lengths = self.span_ends - self.span_starts
        counts = np.maximum(lengths - self.h + 1, 0)
        self.cum = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.frame_total = int(lengths.sum()) if spans else 0

    def __len__(self):
        return int(self.cum[-1])

    @property
    def num_units(self) -> int:
        return len(self)

    def locate(self, units: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Span index and window start for each unit index."""
        units = np.asarray(units, dtype=np.int64)
        span = np.searchsorted(self.cum, units, side="right") - 1
        return span, self.span_starts[span] + (units - self.cum[span])

    def unit(self, u: int) -> SampleRecord:
        span, start = self.locate(np.array([u]))
        i, s = int(span[0]), int(start[0])
        return SampleRecord(
            self.modality, self.span_ids[i], s, s + self.h, self.span_sources[i], self.span_instructions[i]
        )

    def units(self):
        return [self.unit(u) for u in range(len(self))]

    def count_by_source(self) -> dict:
        counts = np.diff(self.cum)
        out = {TARGET: 0, RETRIEVED: 0}
        for c, src in zip(counts, self.span_sources):
            out[src] += int(c)
        return out


def build_augmented(retrieved: RetrievedSet, target: Dataset, h: int = DEFAULT_WINDOW) -> AugmentedSet:
    """Pool the retrieved spans with every target demonstration.

    Spans shorter than ``h`` contribute nothing; tail windows are not padded.
    """
    if h < 1:
        raise ValueError(f"window length must be >= 1, got {h}")
    spans = [
        (m.prior_trajectory_id, m.start, m.end, RETRIEVED, m.instruction) for m in retrieved.matches
    ]
    spans += [(t.id, 0, len(t), TARGET, t.instruction) for t in target]
    aug = AugmentedSet(retrieved.modality, h, spans)
    if len(aug) == 0:
        raise EmptyAugmentedError(
            f"modality {retrieved.modality!r}: no span is at least {h} frames long"
        )
    return aug


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


class SampleStream:
    """Seeded two-stage sampler.

    All randomness comes from one ``numpy`` generator seeded at construction;
    each batch consumes ``2 * batch_size`` uniforms (modality, then window).
    """

    def __init__(
        self,
        augmented: Mapping[str, AugmentedSet],
        weights: ModalityWeights,
        batch_size: int,
        num_batches: int,
        seed: int,
    ):
        if set(augmented) != set(weights.weights):
            raise ConfigurationError(
                f"modality keys differ: augmented {sorted(augmented)} vs weights {sorted(weights.weights)}"
            )
        if batch_size < 1 or num_batches < 0:
            raise ConfigurationError("batch_size must be >= 1 and num_batches >= 0")
        self.modalities = list(weights.weights)
        self.augmented = [augmented[m] for m in self.modalities]
        w = np.array([weights.weights[m] for m in self.modalities], dtype=np.float64)
        if (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
            raise ConfigurationError(f"invalid modality weights {w.tolist()}")
        for m, a, wm in zip(self.modalities, self.augmented, w):
            if wm > 0 and len(a) == 0:
                raise ConfigurationError(f"modality {m!r} has weight {wm} but no windows")
        self.weights = weights
        self.probabilities = w / w.sum()
        self._cdf = np.cumsum(self.probabilities)
        self._cdf[-1] = 1.0
        self._sizes = np.array([len(a) for a in self.augmented], dtype=np.int64)
        self.batch_size = int(batch_size)
        self.num_batches = int(num_batches)
        self.seed = int(seed)

    def _rng(self):
        return np.random.default_rng(self.seed)

    def _draw(self, rng, n):
        u = rng.random(n)
        mod = np.searchsorted(self._cdf, u, side="right")
        mod = np.minimum(mod, len(self.modalities) - 1)
        v = rng.random(n)
        win = np.floor(v * self._sizes[mod]).astype(np.int64)
        win = np.minimum(win, np.maximum(self._sizes[mod] - 1, 0))
        return mod, win

    def draw_indices(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Per batch: modality index and window index arrays."""
        rng = self._rng()
        for _ in range(self.num_batches):
            yield self._draw(rng, self.batch_size)

    def _records(self, mod, win):
        out = [None] * len(mod)
        for k in range(len(self.modalities)):
            sel = np.nonzero(mod == k)[0]
            if sel.size == 0:
                continue
            aug = self.augmented[k]
            span, start = aug.locate(win[sel])
            for pos, i, s in zip(sel.tolist(), span.tolist(), start.tolist()):
                out[pos] = SampleRecord(
                    aug.modality, aug.span_ids[i], s, s + aug.h, aug.span_sources[i], aug.span_instructions[i]
                )
        return out

    def __iter__(self) -> Iterator[list[SampleRecord]]:
        for mod, win in self.draw_indices():
            yield self._records(mod, win)

    def header(self, extra: Mapping | None = None) -> dict:
        cfg = {
            "seed": self.seed,
            "batch_size": self.batch_size,
            "num_batches": self.num_batches,
            "h": {m: a.h for m, a in zip(self.modalities, self.augmented)},
            "weights": dict(self.weights.weights),
            "units": {m: len(a) for m, a in zip(self.modalities, self.augmented)},
            **(extra or {}),
        }
        return {
            "seed": self.seed,
            "weights": dict(self.weights.weights),
            "temperature": self.weights.temperature,
            "config": cfg,
            "config_hash": config_hash(cfg),
        }


def sample_stream(
    augmented: Mapping[str, AugmentedSet],
    weights: ModalityWeights,
    batch_size: int,
    num_batches: int,
    seed: int,
    uniform: bool = False,
) -> SampleStream:
    """Build the stream; ``uniform`` replaces the weights by ``1 / F``."""
    if uniform:
        weights = ModalityWeights.uniform(list(weights.weights))
    return SampleStream(augmented, weights, batch_size, num_batches, seed)


def export_manifest(stream: SampleStream, path: str | Path, extra: Mapping | None = None) -> Path:
    """Write the header line and every sampled record as JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": stream.header(extra)}, sort_keys=True) + "\n")
        for b, batch in enumerate(stream):
            for rec in batch:
                fh.write(json.dumps({"batch": b, **rec.to_dict()}, sort_keys=True) + "\n")
    return path


def read_manifest(path: str | Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])["header"]
    return header, [json.loads(line) for line in lines[1:]]
