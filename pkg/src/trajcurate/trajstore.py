"""On-disk dataset format and the in-memory trajectory model.

A dataset is a directory holding ``manifest.json`` and one binary record per
trajectory. Every record is a flat sequence of little-endian float32 blocks
with no padding::

    ee_positions   frames x 3
    states         frames x state_dim
    actions        frames x action_dim
    <modality>     frames x dim        (one block per modality, manifest order)
    instruction    language_dim        (only if the entry says it has one)

The instruction text itself lives in the manifest entry. Arrays are kept as
read-only float32 in memory so a load/write cycle reproduces the bytes.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetIOError, FormatError, IncompatibleDatasetsError, ValidationError

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")
ROLES = ("target", "prior")


def _frozen(array, ndim, name, trajectory_id):
    arr = np.array(array, dtype=_DTYPE, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(
            f"trajectory {trajectory_id!r}: {name} must be {ndim}-D, got shape {arr.shape}",
            trajectory_id=trajectory_id,
            field=name,
        )
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Frame:
    """Per-frame view of a trajectory."""

    state: np.ndarray
    action: np.ndarray
    embeddings: Mapping[str, np.ndarray]
    ee_position: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One demonstration stored column-wise.

    ``embeddings`` maps modality name to a ``frames x dim`` array.
    """

    id: str
    ee_positions: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    embeddings: Mapping[str, np.ndarray]
    instruction: str = ""
    instruction_embedding: np.ndarray | None = None

    def __post_init__(self):
        tid = self.id
        if not isinstance(tid, str) or not tid:
            raise ValidationError("trajectory id must be a non-empty string", trajectory_id=tid, field="id")
        object.__setattr__(self, "ee_positions", _frozen(self.ee_positions, 2, "ee_positions", tid))
        object.__setattr__(self, "states", _frozen(self.states, 2, "states", tid))
        object.__setattr__(self, "actions", _frozen(self.actions, 2, "actions", tid))
        object.__setattr__(
            self,
            "embeddings",
            {name: _frozen(v, 2, f"embeddings[{name}]", tid) for name, v in self.embeddings.items()},
        )
        if self.instruction_embedding is not None:
            object.__setattr__(
                self,
                "instruction_embedding",
                _frozen(self.instruction_embedding, 1, "instruction_embedding", tid),
            )
        n = self.ee_positions.shape[0]
        if n == 0:
            raise ValidationError(f"trajectory {tid!r} has no frames", trajectory_id=tid, field="frames")
        if self.ee_positions.shape[1] != 3:
            raise ValidationError(
                f"trajectory {tid!r}: ee_positions must have 3 columns", trajectory_id=tid, field="ee_positions"
            )
        for name, arr in [("states", self.states), ("actions", self.actions), *self.embeddings.items()]:
            if arr.shape[0] != n:
                raise ValidationError(
                    f"trajectory {tid!r}: {name} has {arr.shape[0]} frames, expected {n}",
                    trajectory_id=tid,
                    field=name,
                )

    def __len__(self):
        return self.ee_positions.shape[0]

    @property
    def num_frames(self) -> int:
        return len(self)

    def frame(self, index: int) -> Frame:
        return Frame(
            state=self.states[index],
            action=self.actions[index],
            embeddings={k: v[index] for k, v in self.embeddings.items()},
            ee_position=self.ee_positions[index],
        )

    def equals(self, other: "Trajectory") -> bool:
        """Exact equality of ids, text and every array."""
        if (self.id, self.instruction) != (other.id, other.instruction):
            return False
        if list(self.embeddings) != list(other.embeddings):
            return False
        pairs = [
            (self.ee_positions, other.ee_positions),
            (self.states, other.states),
            (self.actions, other.actions),
            *((self.embeddings[k], other.embeddings[k]) for k in self.embeddings),
        ]
        if (self.instruction_embedding is None) != (other.instruction_embedding is None):
            return False
        if self.instruction_embedding is not None:
            pairs.append((self.instruction_embedding, other.instruction_embedding))
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    dim: int


@dataclass(frozen=True)
class DatasetManifest:
    role: str
    action_dim: int
    state_dim: int
    modalities: tuple[ModalitySpec, ...]
    trajectory_count: int
    language_dim: int | None = None

    @property
    def modality_names(self) -> list[str]:
        return [m.name for m in self.modalities]

    def modality_dim(self, name: str) -> int:
        for m in self.modalities:
            if m.name == name:
                return m.dim
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, immutable collection of trajectories plus its manifest."""

    manifest: DatasetManifest
    trajectories: tuple[Trajectory, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        validate_dataset(self.manifest, self.trajectories)
        object.__setattr__(self, "_index", {t.id: t for t in self.trajectories})

    @classmethod
    def from_trajectories(
        cls,
        role: str,
        trajectories: Sequence[Trajectory],
        *,
        action_dim: int | None = None,
        modalities: Sequence[tuple[str, int]] | None = None,
        language_dim: int | None = None,
    ) -> "Dataset":
        """Build a dataset, inferring dimensions from the first trajectory."""
        trajectories = tuple(trajectories)
        if not trajectories:
            raise ValidationError("a dataset needs at least one trajectory")
        first = trajectories[0]
        if action_dim is None:
            action_dim = first.actions.shape[1]
        if modalities is None:
            modalities = [(k, v.shape[1]) for k, v in first.embeddings.items()]
        if language_dim is None and first.instruction_embedding is not None:
            language_dim = first.instruction_embedding.shape[0]
        manifest = DatasetManifest(
            role=role,
            action_dim=int(action_dim),
            state_dim=int(first.states.shape[1]),
            modalities=tuple(ModalitySpec(str(n), int(d)) for n, d in modalities),
            trajectory_count=len(trajectories),
            language_dim=None if language_dim is None else int(language_dim),
        )
        return cls(manifest, trajectories)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, trajectory_id: str) -> Trajectory:
        return self._index[trajectory_id]

    def __contains__(self, trajectory_id):
        return trajectory_id in self._index

    @property
    def role(self) -> str:
        return self.manifest.role

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.trajectories]

    @property
    def total_frames(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def equals(self, other: "Dataset") -> bool:
        return self.manifest == other.manifest and all(
            a.equals(b) for a, b in zip(self.trajectories, other.trajectories)
        )


def validate_dataset(manifest: DatasetManifest, trajectories: Sequence[Trajectory]) -> None:
    """Check every invariant tying trajectories to their manifest."""
    if manifest.role not in ROLES:
        raise ValidationError(f"role must be one of {ROLES}, got {manifest.role!r}", field="role")
    if manifest.action_dim < 1:
        raise ValidationError("action_dim must be positive", field="action_dim")
    names = manifest.modality_names
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate modality names in {names}", field="modalities")
    for m in manifest.modalities:
        if m.dim < 1:
            raise ValidationError(f"modality {m.name!r} has non-positive dim", field="modalities")
    if manifest.trajectory_count != len(trajectories):
        raise ValidationError(
            f"manifest declares {manifest.trajectory_count} trajectories, found {len(trajectories)}",
            field="trajectory_count",
        )
    seen = set()
    for traj in trajectories:
        tid = traj.id
        if tid in seen:
            raise ValidationError(f"duplicate trajectory id {tid!r}", trajectory_id=tid, field="id")
        seen.add(tid)
        if traj.actions.shape[1] != manifest.action_dim:
            raise ValidationError(
                f"trajectory {tid!r}: actions have dim {traj.actions.shape[1]}, manifest declares {manifest.action_dim}",
                trajectory_id=tid,
                field="actions",
            )
        if traj.states.shape[1] != manifest.state_dim:
            raise ValidationError(
                f"trajectory {tid!r}: states have dim {traj.states.shape[1]}, manifest declares {manifest.state_dim}",
                trajectory_id=tid,
                field="states",
            )
        if list(traj.embeddings) != names:
            raise ValidationError(
                f"trajectory {tid!r}: modalities {list(traj.embeddings)} do not match manifest {names}",
                trajectory_id=tid,
                field="embeddings",
            )
        for m in manifest.modalities:
            got = traj.embeddings[m.name].shape[1]
            if got != m.dim:
                raise ValidationError(
                    f"trajectory {tid!r}: modality {m.name!r} has dim {got}, manifest declares {m.dim}",
                    trajectory_id=tid,
                    field=f"embeddings[{m.name}]",
                )
        if traj.instruction_embedding is not None:
            if manifest.language_dim is None:
                raise ValidationError(
                    f"trajectory {tid!r} carries an instruction embedding but language_dim is unset",
                    trajectory_id=tid,
                    field="instruction_embedding",
                )
            if traj.instruction_embedding.shape[0] != manifest.language_dim:
                raise ValidationError(
                    f"trajectory {tid!r}: instruction_embedding has dim "
                    f"{traj.instruction_embedding.shape[0]}, manifest declares {manifest.language_dim}",
                    trajectory_id=tid,
                    field="instruction_embedding",
                )


# ---------------------------------------------------------------------------
# serialization


def _record_name(index: int) -> str:
    return f"traj_{index:06d}.bin"


def manifest_to_json(dataset: Dataset, files: Sequence[str] | None = None) -> str:
    m = dataset.manifest
    files = files or [_record_name(i) for i in range(len(dataset))]
    doc = {
        "format_version": FORMAT_VERSION,
        "role": m.role,
        "action_dim": m.action_dim,
        "state_dim": m.state_dim,
        "language_dim": m.language_dim,
        "modalities": [{"name": s.name, "dim": s.dim} for s in m.modalities],
        "trajectory_count": m.trajectory_count,
        "trajectories": [
            {
                "id": t.id,
                "frames": len(t),
                "file": f,
                "instruction": t.instruction,
                "has_instruction_embedding": t.instruction_embedding is not None,
            }
            for t, f in zip(dataset.trajectories, files)
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def record_bytes(traj: Trajectory, modality_order: Iterable[str]) -> bytes:
    blocks = [traj.ee_positions, traj.states, traj.actions]
    blocks += [traj.embeddings[name] for name in modality_order]
    if traj.instruction_embedding is not None:
        blocks.append(traj.instruction_embedding)
    return b"".join(np.ascontiguousarray(b, dtype=_DTYPE).tobytes() for b in blocks)


def write_dataset(dataset: Dataset, path: str | os.PathLike) -> Path:
    """Serialize ``dataset`` canonically into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    order = dataset.manifest.modality_names
    files = [_record_name(i) for i in range(len(dataset))]
    for traj, name in zip(dataset.trajectories, files):
        (out / name).write_bytes(record_bytes(traj, order))
    (out / MANIFEST_NAME).write_text(manifest_to_json(dataset, files), encoding="utf-8")
    return out


def _require(entry, key, kind, where):
    if key not in entry:
        raise FormatError(f"{where}: missing key {key!r}")
    value = entry[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise FormatError(f"{where}: {key!r} must be an integer")
    if kind is str and not isinstance(value, str):
        raise FormatError(f"{where}: {key!r} must be a string")
    return value


def _read_blocks(path: Path, tid: str, shapes: list[tuple[str, tuple[int, ...]]]):
    raw = path.read_bytes()
    out = {}
    offset = 0
    for name, shape in shapes:
        nbytes = math.prod(shape) * _DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise DatasetIOError(
                f"{path.name}: record for trajectory {tid!r} truncated in block {name!r} "
                f"at byte offset {len(raw)} (block starts at {offset}, needs {nbytes} bytes)",
                path=str(path),
                offset=len(raw),
            )
        out[name] = np.frombuffer(raw, dtype=_DTYPE, count=math.prod(shape), offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(
            f"{path.name}: {len(raw) - offset} trailing bytes after the last block of trajectory {tid!r}"
        )
    return out


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Load and eagerly validate a dataset directory."""
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise FormatError(f"no {MANIFEST_NAME} in {root}")
    try:
        doc = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{mpath}: top level must be an object")

    role = _require(doc, "role", str, MANIFEST_NAME)
    action_dim = _require(doc, "action_dim", int, MANIFEST_NAME)
    state_dim = _require(doc, "state_dim", int, MANIFEST_NAME)
    language_dim = doc.get("language_dim")
    if language_dim is not None and (isinstance(language_dim, bool) or not isinstance(language_dim, int)):
        raise FormatError(f"{MANIFEST_NAME}: 'language_dim' must be an integer or null")
    mods = doc.get("modalities")
    if not isinstance(mods, list):
        raise FormatError(f"{MANIFEST_NAME}: 'modalities' must be a list")
    modalities = tuple(
        ModalitySpec(_require(m, "name", str, "modality"), _require(m, "dim", int, "modality")) for m in mods
    )
    entries = doc.get("trajectories")
    if not isinstance(entries, list):
        raise FormatError(f"{MANIFEST_NAME}: 'trajectories' must be a list")
    count = doc.get("trajectory_count", len(entries))

    trajectories = []
    for k, entry in enumerate(entries):
        where = f"{MANIFEST_NAME} trajectories[{k}]"
        tid = _require(entry, "id", str, where)
        frames = _require(entry, "frames", int, where)
        fname = _require(entry, "file", str, where)
        if frames < 1:
            raise ValidationError(f"trajectory {tid!r} declares {frames} frames", trajectory_id=tid, field="frames")
        fpath = root / fname
        if not fpath.is_file():
            raise FormatError(f"{where}: record file {fname!r} not found")
        shapes = [
            ("ee_positions", (frames, 3)),
            ("states", (frames, state_dim)),
            ("actions", (frames, action_dim)),
        ]
        shapes += [(m.name, (frames, m.dim)) for m in modalities]
        has_lang = bool(entry.get("has_instruction_embedding", False))
        if has_lang:
            if language_dim is None:
                raise ValidationError(
                    f"trajectory {tid!r} has an instruction embedding but language_dim is null",
                    trajectory_id=tid,
                    field="instruction_embedding",
                )
            shapes.append(("__instruction__", (language_dim,)))
        blocks = _read_blocks(fpath, tid, shapes)
        trajectories.append(
            Trajectory(
                id=tid,
                ee_positions=blocks["ee_positions"],
                states=blocks["states"],
                actions=blocks["actions"],
                embeddings={m.name: blocks[m.name] for m in modalities},
                instruction=entry.get("instruction", ""),
                instruction_embedding=blocks.get("__instruction__"),
            )
        )
    manifest = DatasetManifest(
        role=role,
        action_dim=action_dim,
        state_dim=state_dim,
        modalities=modalities,
        trajectory_count=count,
        language_dim=language_dim,
    )
    return Dataset(manifest, tuple(trajectories))


# ---------------------------------------------------------------------------


def average_views(embeddings_per_view: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of per-camera embeddings.

    Accepts a list of equal-shape arrays (single vectors or ``frames x d``
    blocks) and returns their arithmetic mean in float64.
    """
    views = list(embeddings_per_view)
    if not views:
        raise ValueError("average_views needs at least one view")
    arrays = [np.asarray(v, dtype=np.float64) for v in views]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"ragged views: {shape} vs {a.shape}")
    return np.add.reduce(np.stack(arrays), axis=0) / len(arrays)


@dataclass(frozen=True)
class PairingReport:
    shared_modalities: list[str]
    target_only: list[str]
    prior_only: list[str]
    action_dim: int
    language_available: bool


def validate_pairing(target: Dataset, prior: Dataset) -> PairingReport:
    """Check that ``target`` and ``prior`` can be retrieved against each other.

    Retrieval is allowed only on the modalities both datasets carry.
    """
    if target.manifest.action_dim != prior.manifest.action_dim:
        raise IncompatibleDatasetsError(
            f"action_dim mismatch: target {target.manifest.action_dim} vs prior {prior.manifest.action_dim}"
        )
    tnames = target.manifest.modality_names
    pnames = prior.manifest.modality_names
    shared = []
    for name in tnames:
        if name in pnames:
            if target.manifest.modality_dim(name) != prior.manifest.modality_dim(name):
                raise IncompatibleDatasetsError(
                    f"modality {name!r} has dim {target.manifest.modality_dim(name)} in target "
                    f"but {prior.manifest.modality_dim(name)} in prior"
                )
            shared.append(name)
    lang = (
        target.manifest.language_dim is not None
        and target.manifest.language_dim == prior.manifest.language_dim
        and all(t.instruction_embedding is not None for t in target)
        and any(t.instruction_embedding is not None for t in prior)
    )
    return PairingReport(
        shared_modalities=shared,
        target_only=[n for n in tnames if n not in pnames],
        prior_only=[n for n in pnames if n not in tnames],
        action_dim=target.manifest.action_dim,
        language_available=lang,
    )
