"""Pause-based segmentation of target demonstrations.

The end-effector speed proxy is the L1 norm of the frame-to-frame position
delta. Interior runs of below-threshold speed split the demonstration; short
pieces are then folded into a neighbour.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trajstore import Trajectory

SIM_EPSILON = 5e-3
REAL_EPSILON = 2e-3
DEFAULT_MIN_LENGTH = 20


@dataclass(frozen=True, order=True)
class Segment:
    trajectory_id: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment span [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start

    def to_dict(self):
        return {"trajectory_id": self.trajectory_id, "start": self.start, "end": self.end}


@dataclass(frozen=True)
class SegmenterConfig:
    epsilon: float = SIM_EPSILON
    min_length: int = DEFAULT_MIN_LENGTH

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.min_length) != self.min_length or self.min_length < 1:
            raise ValueError(f"min_length must be a positive integer, got {self.min_length}")


def velocity_profile(ee_positions) -> np.ndarray:
    """Return ``|dx| + |dy| + |dz|`` for each consecutive pair of positions."""
    pos = np.asarray(ee_positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of positions, got shape {pos.shape}")
    if pos.shape[0] < 2:
        raise ValueError("velocity_profile needs at least 2 positions")
    return np.abs(np.diff(pos, axis=0)).sum(axis=1)


def pause_boundaries(velocity: np.ndarray, epsilon: float) -> list[int]:
    """Cut indices produced by a velocity profile before any merging.

    ``velocity[t]`` belongs to the transition ``t -> t+1``. Each maximal run
    of below-threshold transitions ``[a, b]`` yields one cut at ``a + 1``: the
    first paused frame closes the preceding segment. Runs touching either end
    of the demonstration do not separate two motions and yield no cut.
    """
    v = np.asarray(velocity)
    n_trans = v.shape[0]
    paused = v < epsilon
    cuts = []
    t = 0
    while t < n_trans:
        if not paused[t]:
            t += 1
            continue
        a = t
        while t < n_trans and paused[t]:
            t += 1
        b = t - 1
        if a > 0 and b < n_trans - 1:
            cuts.append(a + 1)
    return cuts


def merge_short(lengths: Sequence[int], min_length: int) -> list[int]:
    """Fold pieces shorter than ``min_length`` into their shorter neighbour.

    The leftmost offending piece is handled first; ties go to the left
    neighbour. Stops once every piece is long enough or one piece is left.
    """
    pieces = list(lengths)
    while len(pieces) > 1:
        idx = next((i for i, n in enumerate(pieces) if n < min_length), None)
        if idx is None:
            break
        if idx == 0:
            nb = 1
        elif idx == len(pieces) - 1:
            nb = idx - 1
        else:
            nb = idx - 1 if pieces[idx - 1] <= pieces[idx + 1] else idx + 1
        lo, hi = min(idx, nb), max(idx, nb)
        pieces[lo : hi + 1] = [pieces[lo] + pieces[hi]]
    return pieces


def segment_lengths(n_frames: int, ee_positions, config: SegmenterConfig) -> list[int]:
    if n_frames < 2:
        return [n_frames]
    cuts = pause_boundaries(velocity_profile(ee_positions), config.epsilon)
    edges = [0, *cuts, n_frames]
    return merge_short(np.diff(edges).tolist(), config.min_length)


def segment(trajectory: Trajectory, config: SegmenterConfig | None = None) -> list[Segment]:
    """Split one demonstration into ordered, disjoint, covering segments."""
    config = config or SegmenterConfig()
    n = len(trajectory)
    out = []
    start = 0
    for length in segment_lengths(n, trajectory.ee_positions, config):
        out.append(Segment(trajectory.id, start, start + length))
        start += length
    return out


def segment_dataset(dataset, config: SegmenterConfig | None = None) -> list[Segment]:
    segments = []
    for traj in dataset:
        segments.extend(segment(traj, config))
    return segments
