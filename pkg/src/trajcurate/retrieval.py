"""Per-modality similarity search over a prior corpus.

Sub-trajectory modalities use subsequence DTW: every target segment is
aligned against every prior trajectory, each prior trajectory contributes its
single best span, and the K cheapest spans are kept per segment. Language
retrieval works on whole demonstrations via instruction-embedding cosine
similarity.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .segmenter import Segment
from .trajstore import Dataset

log = logging.getLogger(__name__)

METRICS = ("l2", "squared_l2")
DEFAULT_K = 100
DEFAULT_LANGUAGE_THRESHOLD = 0.90
LANGUAGE = "language"
THREADS_ENV = "TRAJCURATE_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """``None`` reads the environment default; 0 means every core."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "0"))
    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def _check_metric(metric):
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return metric == "squared_l2"


def l2_normalize(emb) -> np.ndarray:
    arr = np.asarray(emb, dtype=np.float64)
    norms = np.sqrt((arr * arr).sum(axis=-1, keepdims=True))
    return arr / np.where(norms > 0, norms, 1.0)


def cost_matrix(target_emb, prior_emb, metric: str = "l2") -> np.ndarray:
    """Pairwise frame distances, ``C[i, j] = dist(target_emb[i], prior_emb[j])``."""
    squared = _check_metric(metric)
    X = np.ascontiguousarray(target_emb, dtype=np.float64)
    Y = np.ascontiguousarray(prior_emb, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("embeddings must be 2-D (frames x dim)")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"embedding dims differ: {X.shape[1]} vs {Y.shape[1]}")
    if X.shape[0] < 1 or Y.shape[0] < 1:
        raise ValueError("cost_matrix needs at least one row on each side")
    return _kernels.cost_matrix(X, Y, squared)


def _as_cost(cost):
    C = np.ascontiguousarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 1:
        raise ValueError(f"cost matrix must be non-empty 2-D, got shape {C.shape}")
    return C


class DtwResult(NamedTuple):
    value: float
    path: list


class SdtwResult(NamedTuple):
    value: float
    span: tuple
    path: list


def dtw(cost) -> DtwResult:
    """Full DTW of a cost matrix: value ``D[n-1, m-1]`` and an optimal path."""
    C = _as_cost(cost)
    D = _kernels.dtw_accumulate(C)
    rows, cols = _kernels.backtrack(D, C.shape[1] - 1, False)
    return DtwResult(float(D[-1, -1]), list(zip(rows.tolist(), cols.tolist())))


def sdtw(cost) -> SdtwResult:
    """Subsequence DTW: align all rows against the best contiguous column span.

    The first row of the accumulated matrix is left unaccumulated (free start)
    and the minimum is taken over the last row (free end). ``span`` is
    half-open; ties on the end column go to the leftmost column.
    """
    C = _as_cost(cost)
    D = _kernels.sdtw_accumulate(C)
    j_end = int(_kernels.last_row_argmin(D))
    rows, cols = _kernels.backtrack(D, j_end, True)
    path = list(zip(rows.tolist(), cols.tolist()))
    return SdtwResult(float(D[-1, j_end]), (path[0][1], j_end + 1), path)


# ---------------------------------------------------------------------------
# corpus search


@dataclass(frozen=True)
class MatchResult:
    prior_trajectory_id: str
    start: int
    end: int
    cost: float
    modality: str
    instruction: str = ""
    query: Segment | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def length(self) -> int:
        return self.end - self.start

    def sort_key(self):
        return (self.cost, self.prior_trajectory_id, self.start)

    def to_dict(self) -> dict:
        d = {
            "modality": self.modality,
            "prior_trajectory_id": self.prior_trajectory_id,
            "start": self.start,
            "end": self.end,
            "cost": self.cost,
            "instruction": self.instruction,
        }
        if self.query is not None:
            d["query"] = self.query.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        q = d.get("query")
        return cls(
            prior_trajectory_id=d["prior_trajectory_id"],
            start=int(d["start"]),
            end=int(d["end"]),
            cost=float(d["cost"]),
            modality=d["modality"],
            instruction=d.get("instruction", ""),
            query=None if q is None else Segment(q["trajectory_id"], int(q["start"]), int(q["end"])),
        )


class TopK(NamedTuple):
    matches: list
    exhausted: bool


@dataclass
class RetrievedSet:
    modality: str
    matches: list = field(default_factory=list)
    exhausted: bool = False
    status: str = "ok"

    @property
    def total_frames(self) -> int:
        return sum(m.length for m in self.matches)

    def __len__(self):
        return len(self.matches)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(m.to_dict(), sort_keys=True) + "\n" for m in self.matches)

    @classmethod
    def from_jsonl(cls, modality: str, text: str) -> "RetrievedSet":
        matches = [MatchResult.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(modality, matches, status="ok" if matches else "empty")


class PriorIndex:
    """Prior embeddings for one modality packed into a ragged array."""

    def __init__(self, prior: Dataset, modality: str, normalize: bool = False):
        if modality not in prior.manifest.modality_names:
            raise ValueError(f"modality {modality!r} not present in prior dataset")
        self.modality = modality
        self.normalize = normalize
        self.ids = prior.ids
        self.instructions = [t.instruction for t in prior]
        blocks = [t.embeddings[modality] for t in prior]
        lengths = np.array([b.shape[0] for b in blocks], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        flat = np.concatenate(blocks, axis=0)
        self.flat = np.ascontiguousarray(l2_normalize(flat) if normalize else flat)

    def __len__(self):
        return len(self.ids)

    def prepare_query(self, emb) -> np.ndarray:
        q = l2_normalize(emb) if self.normalize else np.asarray(emb, dtype=np.float64)
        return np.ascontiguousarray(q, dtype=np.float64)

    def search_all(self, query, metric: str = "l2", threads: int | None = None):
        """S-DTW of ``query`` against every prior; returns cost, start, end arrays."""
        squared = _check_metric(metric)
        Q = self.prepare_query(query)
        if Q.shape[1] != self.flat.shape[1]:
            raise ValueError(f"query dim {Q.shape[1]} != prior dim {self.flat.shape[1]}")
        P = len(self)
        cost = np.empty(P, dtype=np.float64)
        start = np.empty(P, dtype=np.int64)
        end = np.empty(P, dtype=np.int64)
        workers = resolve_threads(threads)
        n_chunks = min(P, workers * 4) if workers > 1 else 1
        bounds = np.linspace(0, P, n_chunks + 1).astype(np.int64)

        def run(c):
            _kernels.sdtw_batch(Q, self.flat, self.offsets, bounds[c], bounds[c + 1], squared, cost, start, end)

        if workers == 1:
            run(0)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, range(n_chunks)))
        return cost, start, end


def _select_topk(index: PriorIndex, cost, start, end, k, modality, query=None) -> TopK:
    order = sorted(range(len(index)), key=lambda p: (cost[p], index.ids[p], start[p]))
    exhausted = k > len(order)
    matches = [
        MatchResult(
            prior_trajectory_id=index.ids[p],
            start=int(start[p]),
            end=int(end[p]),
            cost=float(cost[p]),
            modality=modality,
            instruction=index.instructions[p],
            query=query,
        )
        for p in order[:k]
    ]
    return TopK(matches, exhausted)


def retrieve_topk(
    segment: Segment,
    target: Dataset,
    prior: Dataset | PriorIndex,
    modality: str,
    k: int = DEFAULT_K,
    metric: str = "l2",
    *,
    normalize: bool = False,
    threads: int | None = None,
) -> TopK:
    """The ``k`` lowest-cost S-DTW matches of one target segment.

    Ties are ordered by (trajectory id, span start). If ``k`` exceeds the
    corpus size every trajectory is returned and ``exhausted`` is set.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if modality not in target.manifest.modality_names:
        raise ValueError(f"modality {modality!r} not present in target dataset")
    index = prior if isinstance(prior, PriorIndex) else PriorIndex(prior, modality, normalize)
    if index.modality != modality:
        raise ValueError(f"index built for {index.modality!r}, asked for {modality!r}")
    emb = target[segment.trajectory_id].embeddings[modality][segment.start : segment.end]
    cost, start, end = index.search_all(emb, metric, threads)
    return _select_topk(index, cost, start, end, k, modality, segment)


def retrieve_modality(
    target: Dataset,
    prior: Dataset,
    segments: Sequence[Segment],
    modality: str,
    k: int = DEFAULT_K,
    metric: str = "l2",
    *,
    normalize: bool = False,
    threads: int | None = None,
) -> RetrievedSet:
    """Top-k matches for every segment, concatenated in segment order."""
    index = PriorIndex(prior, modality, normalize)
    out = RetrievedSet(modality)
    for seg in segments:
        res = retrieve_topk(seg, target, index, modality, k, metric, threads=threads)
        out.matches.extend(res.matches)
        out.exhausted = out.exhausted or res.exhausted
    if not out.matches:
        out.status = "empty"
    return out


# ---------------------------------------------------------------------------
# language


def cosine_similarity_matrix(a, b) -> np.ndarray:
    return l2_normalize(a) @ l2_normalize(b).T


def allocate_budget(lengths: Sequence[int], budget: int) -> list[int]:
    """Split ``budget`` frames evenly over demos already sorted by preference.

    Each gets ``budget // count``; the remainder goes one frame each to the
    first demos in order. Allocations are capped at the demo length.
    """
    count = len(lengths)
    if count == 0:
        return []
    base, rem = divmod(int(budget), count)
    return [min(int(n), base + (1 if i < rem else 0)) for i, n in enumerate(lengths)]


def retrieve_language(
    target: Dataset,
    prior: Dataset,
    threshold: float = DEFAULT_LANGUAGE_THRESHOLD,
    frame_budget: int | None = None,
) -> RetrievedSet:
    """Whole-demonstration retrieval by instruction similarity.

    A prior demo is kept when its cosine similarity to any target instruction
    is strictly above ``threshold``; its cost is ``1 - similarity``. With a
    ``frame_budget`` each kept demo is truncated from its start so the total
    frame count matches the budget.
    """
    if not -1.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (-1, 1], got {threshold}")
    if frame_budget is not None and frame_budget < 1:
        raise ValueError(f"frame_budget must be >= 1, got {frame_budget}")
    targets = [t.instruction_embedding for t in target if t.instruction_embedding is not None]
    if not targets:
        raise ValueError("target dataset carries no instruction embeddings")
    candidates = [t for t in prior if t.instruction_embedding is not None]
    if not candidates:
        raise ValueError("prior dataset carries no instruction embeddings")
    sims = cosine_similarity_matrix(
        np.stack([c.instruction_embedding for c in candidates]), np.stack(targets)
    ).max(axis=1)
    chosen = [(1.0 - float(s), c) for s, c in zip(sims, candidates) if s > threshold]
    chosen.sort(key=lambda item: (item[0], item[1].id))
    out = RetrievedSet(LANGUAGE)
    if not chosen:
        log.warning("language retrieval: no prior demonstration above threshold %.3f", threshold)
        out.status = "empty"
        return out
    lengths = [len(c) for _, c in chosen]
    alloc = lengths if frame_budget is None else allocate_budget(lengths, frame_budget)
    for (cost, traj), n in zip(chosen, alloc):
        if n < 1:
            continue
        out.matches.append(
            MatchResult(traj.id, 0, int(n), cost, LANGUAGE, instruction=traj.instruction)
        )
    return out


def retrieved_frame_total(sets: Iterable[RetrievedSet]) -> int:
    return sum(s.total_frames for s in sets)
