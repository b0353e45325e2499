"""Modality importance weights from reference-scorer log-likelihoods.

For each modality a reference scorer is fitted on the frames that modality
retrieved, the target demonstrations' actions are scored under it at several
checkpoints, the checkpoint sums are averaged into one relevance score per
modality and the scores go through a temperature softmax.
"""
from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoDataError
from .retrieval import RetrievedSet
from .trajstore import Dataset

SIM_TEMPERATURE = 2.0
REAL_TEMPERATURE = 10.0
NUM_CHECKPOINTS = 10
RETAINED_CHECKPOINTS = 5
STATE_SPACE = "state"


def default_schedule(num_checkpoints: int = NUM_CHECKPOINTS, retained: int = RETAINED_CHECKPOINTS) -> list[int]:
    """Indices of the checkpoints that count: the last ``retained`` ones."""
    if not 1 <= retained <= num_checkpoints:
        raise ValueError("need 1 <= retained <= num_checkpoints")
    return list(range(num_checkpoints - retained, num_checkpoints))


@dataclass
class FitData:
    """Frames a reference scorer is fitted on."""

    states: np.ndarray
    actions: np.ndarray
    embeddings: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    def features(self, space: str) -> np.ndarray:
        if space == STATE_SPACE:
            return np.asarray(self.states, dtype=np.float64)
        return np.asarray(self.embeddings[space], dtype=np.float64)


def gather_frames(spans, dataset: Dataset, modalities: Sequence[str] = ()) -> FitData:
    """Concatenate every frame inside ``spans`` of ``(trajectory_id, start, end)``."""
    spans = list(spans)
    if not spans:
        raise NoDataError("no spans to gather")
    states, actions = [], []
    emb = {m: [] for m in modalities}
    for tid, s, e in spans:
        traj = dataset[tid]
        states.append(traj.states[s:e])
        actions.append(traj.actions[s:e])
        for m in modalities:
            emb[m].append(traj.embeddings[m][s:e])
    return FitData(
        np.concatenate(states).astype(np.float64),
        np.concatenate(actions).astype(np.float64),
        {m: np.concatenate(v).astype(np.float64) for m, v in emb.items()},
    )


def target_frames(target: Dataset, modalities: Sequence[str] = ()) -> FitData:
    return gather_frames([(t.id, 0, len(t)) for t in target], target, modalities)


class ReferenceScorer(abc.ABC):
    """A model fitted on one modality's retrieved frames.

    ``checkpoints`` lists the snapshots a fit produces; log-likelihoods are
    evaluated per checkpoint index.
    """

    feature_space: str = STATE_SPACE

    @property
    @abc.abstractmethod
    def checkpoints(self) -> list:
        ...

    @abc.abstractmethod
    def fit(self, data: FitData, seed: int = 0) -> "ReferenceScorer":
        ...

    @abc.abstractmethod
    def log_likelihoods(self, data: FitData, checkpoints: Sequence[int]) -> np.ndarray:
        """Per-frame log-likelihoods of ``data.actions``, shape (len(checkpoints), frames)."""

    def log_likelihood(self, state, action, checkpoint: int, embedding=None) -> float:
        emb = {} if embedding is None else {self.feature_space: np.atleast_2d(embedding)}
        data = FitData(np.atleast_2d(state), np.atleast_2d(action), emb)
        return float(self.log_likelihoods(data, [checkpoint])[0, 0])


class KnnGaussianScorer(ReferenceScorer):
    """Local diagonal-Gaussian action model.

    For a query frame the ``k`` nearest fitted frames in the chosen feature
    space give a mean action and per-dimension variance (floored); the score
    is the Gaussian log-density of the query action. Checkpoint ``e`` of
    ``num_checkpoints`` uses ``max(1, round(k * (e + 1) / num_checkpoints))``
    neighbours, so the last checkpoint uses ``k`` itself.
    """

    def __init__(
        self,
        k: int = 16,
        scoring_modality: str = STATE_SPACE,
        variance_floor: float = 1e-4,
        num_checkpoints: int = NUM_CHECKPOINTS,
    ):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not variance_floor > 0:
            raise ValueError(f"variance_floor must be > 0, got {variance_floor}")
        if num_checkpoints < 1:
            raise ValueError("num_checkpoints must be >= 1")
        self.k = int(k)
        self.feature_space = scoring_modality
        self.variance_floor = float(variance_floor)
        self.num_checkpoints = int(num_checkpoints)
        self._tree = None
        self._actions = None
        self.seed = None

    @property
    def checkpoints(self) -> list[int]:
        n = self.num_checkpoints
        return [max(1, int(round(self.k * (e + 1) / n))) for e in range(n)]

    def fit(self, data: FitData, seed: int = 0) -> "KnnGaussianScorer":
        if len(data) == 0:
            raise NoDataError("cannot fit a scorer on zero frames")
        self._tree = cKDTree(data.features(self.feature_space))
        self._actions = np.asarray(data.actions, dtype=np.float64)
        self.seed = seed
        return self

    @property
    def fitted(self) -> bool:
        return self._tree is not None

    def log_likelihoods(self, data: FitData, checkpoints: Sequence[int]) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("scorer is not fitted")
        n_fit = self._actions.shape[0]
        ks = [min(self.checkpoints[c], n_fit) for c in checkpoints]
        kmax = max(ks)
        _, idx = self._tree.query(data.features(self.feature_space), k=kmax)
        idx = np.asarray(idx).reshape(len(data), kmax)
        neigh = self._actions[idx]  # frames x kmax x A
        actions = np.asarray(data.actions, dtype=np.float64)
        out = np.empty((len(ks), len(data)))
        for row, k in enumerate(ks):
            sel = neigh[:, :k, :]
            mu = sel.mean(axis=1)
            var = np.maximum(sel.var(axis=1), self.variance_floor)
            resid = actions - mu
            out[row] = -0.5 * (np.log(2.0 * np.pi * var) + resid * resid / var).sum(axis=1)
        return out


def make_scorer(config: Mapping | None = None) -> ReferenceScorer:
    config = dict(config or {})
    kind = config.pop("kind", "knn-gaussian")
    if kind != "knn-gaussian":
        raise ValueError(f"unknown scorer kind {kind!r}")
    return KnnGaussianScorer(**config)


@dataclass
class ModalityScore:
    modality: str
    checkpoint_scores: list
    score: float = float("nan")

    def __post_init__(self):
        if self.checkpoint_scores:
            self.score = math.fsum(self.checkpoint_scores) / len(self.checkpoint_scores)
        elif math.isnan(self.score):
            self.score = -math.inf

    @property
    def empty(self) -> bool:
        return self.score == -math.inf


def fit_reference(
    retrieved: RetrievedSet,
    prior: Dataset,
    scorer_config: Mapping | None = None,
    seed: int = 0,
) -> ReferenceScorer | None:
    """Fit a fresh scorer on every frame of ``retrieved``; ``None`` if it is empty."""
    if not retrieved.matches:
        return None
    scorer = make_scorer(scorer_config)
    modalities = [] if scorer.feature_space == STATE_SPACE else [scorer.feature_space]
    spans = [(m.prior_trajectory_id, m.start, m.end) for m in retrieved.matches]
    return scorer.fit(gather_frames(spans, prior, modalities), seed=seed)


def score_modality(
    scorer: ReferenceScorer | None,
    target: Dataset,
    schedule: Sequence[int] | None = None,
    modality: str = "",
) -> ModalityScore:
    """Sum target log-likelihood per retained checkpoint, then average."""
    if scorer is None:
        return ModalityScore(modality, [], -math.inf)
    schedule = list(default_schedule(len(scorer.checkpoints)) if schedule is None else schedule)
    if not schedule:
        raise ValueError("checkpoint schedule is empty")
    modalities = [] if scorer.feature_space == STATE_SPACE else [scorer.feature_space]
    data = target_frames(target, modalities)
    ll = scorer.log_likelihoods(data, schedule)
    return ModalityScore(modality, [math.fsum(row) for row in ll])


@dataclass
class ModalityWeights:
    weights: dict
    temperature: float
    raw_scores: dict

    def __getitem__(self, modality):
        return self.weights[modality]

    @property
    def modalities(self) -> list[str]:
        return list(self.weights)

    def argmax(self) -> str:
        return max(self.weights, key=lambda m: self.weights[m])

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "weights": dict(self.weights),
            "raw_scores": {m: (None if s == -math.inf else s) for m, s in self.raw_scores.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModalityWeights":
        raw = {m: (-math.inf if s is None else float(s)) for m, s in d.get("raw_scores", {}).items()}
        return cls({m: float(w) for m, w in d["weights"].items()}, float(d.get("temperature", 1.0)), raw)

    @classmethod
    def uniform(cls, modalities: Sequence[str]) -> "ModalityWeights":
        """Non-adaptive fusion: every modality gets ``1 / F``."""
        modalities = list(modalities)
        if not modalities:
            raise NoDataError("no modalities to weight")
        w = 1.0 / len(modalities)
        return cls({m: w for m in modalities}, math.inf, {m: 0.0 for m in modalities})


def softmax_weights(scores: Mapping[str, float], temperature: float = SIM_TEMPERATURE) -> ModalityWeights:
    """Temperature softmax over modality scores.

    ``-inf`` scores (modalities that retrieved nothing) get weight 0 and the
    rest are renormalised among themselves.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    names = list(scores)
    vals = np.array([float(scores[m]) for m in names], dtype=np.float64)
    if np.isnan(vals).any() or np.isposinf(vals).any():
        raise ValueError("scores must be finite or -inf")
    finite = np.isfinite(vals)
    if not finite.any():
        raise NoDataError("every modality score is -inf; nothing to weight")
    z = np.where(finite, (vals - vals[finite].max()) / temperature, -np.inf)
    e = np.exp(z)
    w = e / e.sum()
    return ModalityWeights(
        {m: float(x) for m, x in zip(names, w)},
        float(temperature),
        {m: float(v) for m, v in zip(names, vals)},
    )


def load_external_scores(path: str | Path) -> dict[str, ModalityScore]:
    """Read scores computed outside the engine.

    Accepts ``{"modality": S}`` or ``{"modality": [S_e, ...]}``, optionally
    nested under a ``"scores"`` key; ``null`` marks an empty modality.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "scores" in doc:
        doc = doc["scores"]
    if not isinstance(doc, dict) or not doc:
        raise ValueError(f"{path}: expected a non-empty object of modality scores")
    out = {}
    for m, v in doc.items():
        if v is None:
            out[m] = ModalityScore(m, [], -math.inf)
        elif isinstance(v, list):
            out[m] = ModalityScore(m, [float(x) for x in v])
        else:
            out[m] = ModalityScore(m, [float(v)])
    return out


def estimate_weights(
    retrieved: Mapping[str, RetrievedSet],
    target: Dataset,
    prior: Dataset,
    temperature: float = SIM_TEMPERATURE,
    scorer_config: Mapping | None = None,
    seed: int = 0,
    schedule: Sequence[int] | None = None,
) -> tuple[ModalityWeights, dict[str, ModalityScore]]:
    """Fit, score and normalise every modality in ``retrieved``."""
    scores = {}
    for modality, rset in retrieved.items():
        scorer = fit_reference(rset, prior, scorer_config, seed)
        scores[modality] = score_modality(scorer, target, schedule, modality)
    weights = softmax_weights({m: s.score for m, s in scores.items()}, temperature)
    return weights, scores
