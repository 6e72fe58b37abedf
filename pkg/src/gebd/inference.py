"""Whole-video scoring, peak selection and score ensembling.

Score dumps hold one video per line: ``video_id T fps duration p_0 ... p_{T-1}``.
Detection dumps hold ``video_id k t_1 ... t_k`` (seconds).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import supervision
from . import tensor as tc
from .data_io import FormatError, FrameFeatureSequence
from .fileutil import atomic_write_text
from .network import BoundaryTransformer


@dataclass
class BoundaryScores:
    video_id: str
    p: np.ndarray
    fps: float
    duration_s: float

    @property
    def T(self) -> int:
        return len(self.p)


@dataclass
class DetectionResult:
    video_id: str
    boundary_times_s: list[float]


def score_video(model: BoundaryTransformer, seq: FrameFeatureSequence) -> BoundaryScores:
    if seq.C != model.cfg.in_channels:
        raise ValueError(f"{seq.video_id}: {seq.C} feature channels, model expects "
                         f"{model.cfg.in_channels}")
    with tc.no_grad():
        fw = model(np.asarray(seq.features, dtype=np.float64))
    p = supervision.merge(fw.b, fw.m)
    return BoundaryScores(seq.video_id, p, seq.fps, seq.duration_s)


def peak_select(p, radius: int = 4, threshold: float = 0.5) -> np.ndarray:
    """Indices of scores above ``threshold`` that are maximal within ``±radius``.

    On plateaus only the leftmost index of the window survives: a frame must be
    strictly greater than every earlier frame in its window and at least as
    large as every later one.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    p = np.asarray(p, dtype=np.float64)
    keep = p > threshold
    for d in range(1, min(radius, len(p) - 1) + 1):
        keep[d:] &= p[d:] > p[:-d]       # earlier neighbour at distance d
        keep[:-d] &= p[:-d] >= p[d:]     # later neighbour at distance d
    return np.flatnonzero(keep)


def indices_to_times(indices, fps: float) -> np.ndarray:
    """Frame-centre timestamps in seconds."""
    return (np.asarray(indices, dtype=np.float64) + 0.5) / fps


def detect(scores: BoundaryScores, radius: int = 4, threshold: float = 0.5) -> DetectionResult:
    idx = peak_select(scores.p, radius, threshold)
    times = [t for t in indices_to_times(idx, scores.fps).tolist() if 0 < t < scores.duration_s]
    return DetectionResult(scores.video_id, times)


def ensemble(scores: list[BoundaryScores]) -> BoundaryScores:
    """Elementwise mean of per-frame scores from several models."""
    if not scores:
        raise ValueError("nothing to ensemble")
    first = scores[0]
    for s in scores[1:]:
        if s.video_id != first.video_id:
            raise ValueError(f"video_id mismatch: {first.video_id!r} vs {s.video_id!r}")
        if s.T != first.T:
            raise ValueError(f"{first.video_id}: length mismatch {first.T} vs {s.T}")
    stack = np.sort(np.stack([np.asarray(s.p, dtype=np.float64) for s in scores]), axis=0)
    # running mean over sorted values: exact on duplicates, independent of input order
    p = stack[0].copy()
    for k in range(1, len(stack)):
        p += (stack[k] - p) / (k + 1)
    p = np.clip(p, stack[0], stack[-1])
    return BoundaryScores(first.video_id, p, first.fps, first.duration_s)


# dumps ---------------------------------------------------------------------------

def format_scores(scores: list[BoundaryScores]) -> str:
    lines = []
    for s in scores:
        vals = " ".join(repr(float(v)) for v in s.p)
        lines.append(f"{s.video_id} {s.T} {float(s.fps)!r} {float(s.duration_s)!r} {vals}".rstrip())
    return "".join(line + "\n" for line in lines)


def write_scores(scores: list[BoundaryScores], path) -> None:
    atomic_write_text(path, format_scores(scores))


def read_scores(path) -> list[BoundaryScores]:
    out, seen = [], set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tok = line.split()
        try:
            vid, T, fps, dur = tok[0], int(tok[1]), float(tok[2]), float(tok[3])
            p = np.array([float(x) for x in tok[4:]])
        except (IndexError, ValueError) as e:
            raise FormatError(f"{path}:{lineno}: malformed score record ({e})") from None
        if len(p) != T:
            raise FormatError(f"{path}:{lineno}: declared T={T}, found {len(p)} scores")
        if not np.all(np.isfinite(p)):
            raise FormatError(f"{path}:{lineno}: non-finite score")
        if vid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate video_id {vid!r}")
        seen.add(vid)
        out.append(BoundaryScores(vid, p, fps, dur))
    return out


def format_detections(dets: list[DetectionResult]) -> str:
    lines = []
    for d in dets:
        parts = [d.video_id, str(len(d.boundary_times_s))] + [repr(float(t)) for t in d.boundary_times_s]
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


def write_detections(dets: list[DetectionResult], path) -> None:
    atomic_write_text(path, format_detections(dets))


def read_detections(path) -> list[DetectionResult]:
    out, seen = [], set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tok = line.split()
        try:
            vid, k = tok[0], int(tok[1])
            times = [float(x) for x in tok[2:]]
        except (IndexError, ValueError) as e:
            raise FormatError(f"{path}:{lineno}: malformed detection record ({e})") from None
        if len(times) != k:
            raise FormatError(f"{path}:{lineno}: declared {k} boundaries, found {len(times)}")
        if vid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate video_id {vid!r}")
        seen.add(vid)
        out.append(DetectionResult(vid, times))
    return out
