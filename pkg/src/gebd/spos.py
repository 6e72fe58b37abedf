"""Partition of a frame sequence into groups that share context windows.

Frames are split into consecutive groups of ``s`` frames. Each group owns one
window of ``L`` padded indices centred on it; every frame in the group uses
that window as its context, so the encoder runs ``ceil(T / s)`` times.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Group:
    frame_start: int
    frame_stop: int
    window_start: int
    window_stop: int

    @property
    def frames(self) -> range:
        return range(self.frame_start, self.frame_stop)


@dataclass(frozen=True)
class ContextPlan:
    T: int
    L: int
    s: int
    groups: tuple[Group, ...]

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def window_indices(self) -> np.ndarray:
        """(num_groups, L) padded frame indices, clamped into ``[0, T)``."""
        starts = np.array([g.window_start for g in self.groups])
        idx = starts[:, None] + np.arange(self.L)[None, :]
        return np.clip(idx, 0, self.T - 1)

    def frame_group(self) -> np.ndarray:
        """Group index of every frame, shape (T,)."""
        return np.arange(self.T) // self.s

    def frame_offset(self) -> np.ndarray:
        """Position of every frame inside its group's window, shape (T,)."""
        t = np.arange(self.T)
        starts = np.array([g.window_start for g in self.groups])
        return t - starts[self.frame_group()]


def plan(T: int, L: int, s: int) -> ContextPlan:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if not 1 <= s <= L:
        raise ValueError(f"stride s must satisfy 1 <= s <= L, got s={s}, L={L}")
    lead = (L - s) // 2
    groups = []
    for start in range(0, T, s):
        w0 = start - lead
        groups.append(Group(start, min(start + s, T), w0, w0 + L))
    return ContextPlan(T, L, s, tuple(groups))


def gather(features: np.ndarray, ctx: ContextPlan) -> list[np.ndarray]:
    """One (L, C) context per group, edges padded by replication."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != ctx.T:
        raise ValueError(f"features shape {features.shape} does not match plan T={ctx.T}")
    windows = features[ctx.window_indices()]
    return list(windows)
