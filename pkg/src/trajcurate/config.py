"""Pipeline configuration with simulation and real-robot presets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import ConfigurationError
from .retrieval import DEFAULT_K, DEFAULT_LANGUAGE_THRESHOLD, METRICS
from .segmenter import DEFAULT_MIN_LENGTH, REAL_EPSILON, SIM_EPSILON
from .weighting import NUM_CHECKPOINTS, REAL_TEMPERATURE, RETAINED_CHECKPOINTS, SIM_TEMPERATURE

PRESETS = {
    "sim": {"epsilon": SIM_EPSILON, "temperature": SIM_TEMPERATURE, "k": DEFAULT_K},
    "real": {"epsilon": REAL_EPSILON, "temperature": REAL_TEMPERATURE, "k": DEFAULT_K},
}


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "knn-gaussian"
    k: int = 16
    scoring_modality: str = "state"
    variance_floor: float = 1e-4
    external_path: str | None = None

    def factory_kwargs(self) -> dict:
        return {"kind": self.kind, "k": self.k, "scoring_modality": self.scoring_modality,
                "variance_floor": self.variance_floor}


@dataclass(frozen=True)
class PipelineConfig:
    target: str | None = None
    prior: str | None = None
    output_dir: str | None = None
    modalities: tuple | None = None
    language: bool = True
    language_threshold: float = DEFAULT_LANGUAGE_THRESHOLD
    frame_budget: int | None = None
    k: int = DEFAULT_K
    metric: str = "l2"
    normalize: bool = False
    epsilon: float = SIM_EPSILON
    min_length: int = DEFAULT_MIN_LENGTH
    temperature: float = SIM_TEMPERATURE
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    num_checkpoints: int = NUM_CHECKPOINTS
    retained_checkpoints: int = RETAINED_CHECKPOINTS
    h: int = 10
    batch_size: int = 32
    num_batches: int = 1000
    uniform: bool = False
    seed: int = 0
    threads: int | None = None

    @classmethod
    def preset(cls, name: str, **overrides) -> "PipelineConfig":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls.from_dict({**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config fields: {', '.join(unknown)}")
        if isinstance(d.get("scorer"), Mapping):
            sknown = {f.name for f in fields(ScorerConfig)}
            bad = sorted(set(d["scorer"]) - sknown)
            if bad:
                raise ConfigurationError(f"unknown scorer fields: {', '.join(bad)}")
            d["scorer"] = ScorerConfig(**d["scorer"])
        if d.get("modalities") is not None:
            d["modalities"] = tuple(d["modalities"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path, preset: str | None = None, **overrides) -> "PipelineConfig":
        """Read a JSON config.

        Precedence, lowest first: field defaults, preset (argument or the
        file's ``preset`` key), file contents, ``overrides``.
        """
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config {path}: top level must be an object")
        preset = preset or doc.pop("preset", None)
        doc.pop("preset", None)
        if preset and preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = dict(PRESETS[preset]) if preset else {}
        return cls.from_dict({**base, **doc, **overrides})

    def replace(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["modalities"] is not None:
            d["modalities"] = list(d["modalities"])
        return d

    def hashable(self) -> dict:
        """Fields that influence artifacts; paths and thread count are excluded."""
        d = self.to_dict()
        for key in ("target", "prior", "output_dir", "threads"):
            d.pop(key)
        return d

    def validate(self, require_paths: bool = True) -> "PipelineConfig":
        problems = []
        if require_paths:
            for key in ("target", "prior"):
                value = getattr(self, key)
                if value is None:
                    problems.append(f"{key}: dataset path is required")
                elif not Path(value).exists():
                    problems.append(f"{key}: path does not exist: {value}")
        if self.k < 1:
            problems.append(f"k: must be >= 1, got {self.k}")
        if self.metric not in METRICS:
            problems.append(f"metric: must be one of {METRICS}, got {self.metric!r}")
        if not self.epsilon > 0:
            problems.append(f"epsilon: must be > 0, got {self.epsilon}")
        if self.min_length < 1:
            problems.append(f"min_length: must be >= 1, got {self.min_length}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            problems.append(f"temperature: must be finite and > 0, got {self.temperature}")
        if not -1.0 < self.language_threshold <= 1.0:
            problems.append(f"language_threshold: must lie in (-1, 1], got {self.language_threshold}")
        if self.frame_budget is not None and self.frame_budget < 1:
            problems.append(f"frame_budget: must be >= 1, got {self.frame_budget}")
        if self.scorer.k < 1:
            problems.append(f"scorer.k: must be >= 1, got {self.scorer.k}")
        if not self.scorer.variance_floor > 0:
            problems.append(f"scorer.variance_floor: must be > 0, got {self.scorer.variance_floor}")
        if self.scorer.kind not in ("knn-gaussian", "external"):
            problems.append(f"scorer.kind: must be knn-gaussian or external, got {self.scorer.kind!r}")
        if self.scorer.kind == "external":
            if not self.scorer.external_path:
                problems.append("scorer.external_path: required for external scores")
            elif not Path(self.scorer.external_path).exists():
                problems.append(f"scorer.external_path: path does not exist: {self.scorer.external_path}")
        if not 1 <= self.retained_checkpoints <= self.num_checkpoints:
            problems.append("retained_checkpoints: must lie in [1, num_checkpoints]")
        if self.h < 1:
            problems.append(f"h: must be >= 1, got {self.h}")
        if self.batch_size < 1:
            problems.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.num_batches < 0:
            problems.append(f"num_batches: must be >= 0, got {self.num_batches}")
        if self.threads is not None and self.threads < 0:
            problems.append(f"threads: must be >= 0, got {self.threads}")
        if problems:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))
        return self
