"""Feature and annotation files, modality fusion, synthetic datasets.

Feature files come in two flavours sharing one loader:

* binary: ``GEBDFEAT`` magic, then a little-endian header
  ``<u2 version, u4 T, u4 C, f8 fps, f8 duration_s, u2 id_len>``, the UTF-8
  video id, and ``T*C`` row-major float32 values;
* text: a ``# gebd-features v1`` first line, ``key value`` header lines for
  ``video_id``, ``T``, ``C``, ``fps`` and ``duration``, then ``T`` rows of
  ``C`` whitespace-separated numbers.

Annotation files hold one video per line:
``video_id duration_s k t_1 c_1 ... t_k c_k`` (category 0 = unlabeled).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileutil import atomic_write_bytes

MAGIC = b"GEBDFEAT"
VERSION = 1
TEXT_MAGIC = "# gebd-features v1"
_HEADER = struct.Struct("<HIIddH")


class FormatError(ValueError):
    """A data file failed validation; the message names the location."""


@dataclass
class FrameFeatureSequence:
    video_id: str
    features: np.ndarray
    fps: float
    duration_s: float

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise ValueError(f"{self.video_id}: features must be 2-d, got {self.features.shape}")
        if self.features.shape[0] < 1:
            raise ValueError(f"{self.video_id}: empty sequence")
        if not (self.fps > 0 and self.duration_s > 0):
            raise ValueError(f"{self.video_id}: fps and duration must be positive")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def C(self) -> int:
        return self.features.shape[1]


@dataclass
class BoundaryAnnotation:
    video_id: str
    duration_s: float
    boundaries_s: list[float] = field(default_factory=list)
    categories: list[int] | None = None

    def __post_init__(self):
        validate_annotation(self)


def validate_annotation(ann: BoundaryAnnotation) -> None:
    if not ann.duration_s > 0:
        raise ValueError(f"{ann.video_id}: duration must be positive")
    prev = -math.inf
    for t in ann.boundaries_s:
        if not math.isfinite(t):
            raise ValueError(f"{ann.video_id}: non-finite boundary {t}")
        if not 0 < t < ann.duration_s:
            raise ValueError(f"{ann.video_id}: boundary {t} outside (0, {ann.duration_s})")
        if t <= prev:
            raise ValueError(f"{ann.video_id}: boundaries not strictly ascending at {t}")
        prev = t
    if ann.categories is not None:
        if len(ann.categories) != len(ann.boundaries_s):
            raise ValueError(f"{ann.video_id}: {len(ann.categories)} categories for "
                             f"{len(ann.boundaries_s)} boundaries")
        if any(c < 0 for c in ann.categories):
            raise ValueError(f"{ann.video_id}: negative category")


# feature files --------------------------------------------------------------

def save_features(seq: FrameFeatureSequence, path, text: bool = False) -> None:
    path = Path(path)
    if text:
        lines = [TEXT_MAGIC, f"video_id {seq.video_id}", f"T {seq.T}", f"C {seq.C}",
                 f"fps {seq.fps!r}", f"duration {seq.duration_s!r}"]
        lines += [" ".join(repr(float(v)) for v in row) for row in seq.features]
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
        return
    vid = seq.video_id.encode("utf-8")
    header = MAGIC + _HEADER.pack(VERSION, seq.T, seq.C, seq.fps, seq.duration_s, len(vid)) + vid
    body = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + body)


def load_features(path) -> FrameFeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        seq = _parse_binary(raw, path)
    elif raw.startswith(TEXT_MAGIC.encode()):
        seq = _parse_text(raw.decode("utf-8"), path)
    else:
        raise FormatError(f"{path}: unrecognised feature file (bad magic)")
    bad = np.argwhere(~np.isfinite(seq.features))
    if len(bad):
        r, c = bad[0]
        raise FormatError(f"{path}: non-finite value at row {r}, column {c}")
    return seq


def _parse_binary(raw: bytes, path: Path) -> FrameFeatureSequence:
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    version, T, C, fps, duration, id_len = _HEADER.unpack_from(raw, off)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off += _HEADER.size
    vid = raw[off:off + id_len].decode("utf-8")
    off += id_len
    expected = T * C
    actual, rem = divmod(len(raw) - off, 4)
    if rem or actual != expected:
        raise FormatError(f"{path}: expected {expected} values (T={T}, C={C}), "
                          f"found {(len(raw) - off) / 4:g}")
    data = np.frombuffer(raw, dtype="<f4", count=expected, offset=off).reshape(T, C)
    try:
        return FrameFeatureSequence(vid, data.astype(np.float32), fps, duration)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def _parse_text(text: str, path: Path) -> FrameFeatureSequence:
    lines = text.splitlines()
    header = {}
    keys = ("video_id", "T", "C", "fps", "duration")
    for lineno in range(2, 2 + len(keys)):
        if lineno > len(lines):
            raise FormatError(f"{path}:{lineno}: truncated header")
        parts = lines[lineno - 1].split(maxsplit=1)
        if len(parts) != 2 or parts[0] not in keys or parts[0] in header:
            raise FormatError(f"{path}:{lineno}: malformed header line {lines[lineno - 1]!r}")
        header[parts[0]] = parts[1].strip()
    try:
        T, C = int(header["T"]), int(header["C"])
        fps, duration = float(header["fps"]), float(header["duration"])
    except ValueError as e:
        raise FormatError(f"{path}: malformed header value ({e})") from None
    values = []
    first_row = 2 + len(keys)
    for lineno, line in enumerate(lines[first_row - 1:], start=first_row):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a number: {tok!r}") from None
    if len(values) != T * C:
        raise FormatError(f"{path}: expected {T * C} values (T={T}, C={C}), found {len(values)}")
    data = np.array(values, dtype=np.float64).reshape(T, C)
    try:
        return FrameFeatureSequence(header["video_id"], data, fps, duration)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def load_feature_dir(directory) -> dict[str, FrameFeatureSequence]:
    """All ``*.feat`` / ``*.txt`` feature files in a directory, keyed by video id."""
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix not in (".feat", ".txt"):
            continue
        seq = load_features(p)
        if seq.video_id in out:
            raise FormatError(f"{p}: duplicate video_id {seq.video_id!r}")
        out[seq.video_id] = seq
    return out


def fuse_modalities(rgb: FrameFeatureSequence, flow: FrameFeatureSequence) -> FrameFeatureSequence:
    """Concatenate per-frame features channel-wise, RGB channels first."""
    if rgb.video_id != flow.video_id:
        raise ValueError(f"video_id mismatch: {rgb.video_id!r} vs {flow.video_id!r}")
    if rgb.T != flow.T:
        raise ValueError(f"{rgb.video_id}: frame count mismatch {rgb.T} vs {flow.T}")
    fused = np.concatenate([rgb.features, flow.features.astype(rgb.features.dtype)], axis=1)
    return FrameFeatureSequence(rgb.video_id, fused, rgb.fps, rgb.duration_s)


# annotations ----------------------------------------------------------------

def format_annotation(ann: BoundaryAnnotation) -> str:
    cats = ann.categories if ann.categories is not None else [0] * len(ann.boundaries_s)
    parts = [ann.video_id, repr(float(ann.duration_s)), str(len(ann.boundaries_s))]
    for t, c in zip(ann.boundaries_s, cats):
        parts += [repr(float(t)), str(int(c))]
    return " ".join(parts)


def save_annotations(anns, path) -> None:
    text = "".join(format_annotation(a) + "\n" for a in anns)
    atomic_write_bytes(Path(path), text.encode())


def load_annotations(path) -> list[BoundaryAnnotation]:
    path = Path(path)
    out, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tok = line.split()
        try:
            vid, duration, k = tok[0], float(tok[1]), int(tok[2])
            if len(tok) != 3 + 2 * k:
                raise FormatError(f"{path}:{lineno}: expected {3 + 2 * k} fields, found {len(tok)}")
            times = [float(x) for x in tok[3::2]]
            cats = [int(x) for x in tok[4::2]]
        except (IndexError, ValueError) as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{path}:{lineno}: malformed record ({e})") from None
        if vid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate video_id {vid!r}")
        seen.add(vid)
        try:
            out.append(BoundaryAnnotation(vid, duration, times, cats))
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
    return out


def times_to_indices(times_s, fps: float, T: int) -> np.ndarray:
    """Frame containing each timestamp (inverse of the frame-centre convention)."""
    idx = np.floor(np.asarray(times_s, dtype=np.float64) * fps).astype(int)
    return np.clip(idx, 0, T - 1)


# synthetic data -------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Piecewise-stationary feature sequences with known change points.

    Every segment draws a mean vector from N(0, mean_scale^2) and raises one
    channel block (of ``num_categories`` equal blocks) by ``category_shift``.
    The segment after a boundary of category k raises block k, so a
    boundary's category can be read off the segment it opens; the first
    segment raises a random block. Frames add N(0, noise_scale^2) noise.
    """

    num_videos: int = 100
    T: int = 100
    C: int = 16
    boundary_rate: float = 4.0
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    min_gap: int = 10
    fps: float = 10.0
    num_categories: int = 8
    category_shift: float = 2.0
    flow_C: int = 0
    seed: int = 0
    prefix: str = "vid"

    def validate(self) -> None:
        if self.num_videos < 1 or self.T < 2 or self.C < 1:
            raise ValueError("num_videos >= 1, T >= 2 and C >= 1 required")
        if self.boundary_rate < 0 or self.noise_scale < 0 or self.mean_scale < 0:
            raise ValueError("boundary_rate, noise_scale, mean_scale must be >= 0")
        if self.min_gap < 1 or self.fps <= 0 or self.num_categories < 1 or self.flow_C < 0:
            raise ValueError("min_gap >= 1, fps > 0, num_categories >= 1, flow_C >= 0 required")


@dataclass
class SyntheticVideo:
    rgb: FrameFeatureSequence
    flow: FrameFeatureSequence | None
    annotation: BoundaryAnnotation
    boundary_frames: np.ndarray


def _place_boundaries(rng: np.random.Generator, T: int, k: int, min_gap: int) -> np.ndarray:
    # boundary frames in [min_gap, T - min_gap], pairwise >= min_gap apart
    slack = (T - min_gap) - min_gap - (k - 1) * min_gap
    if k == 0 or slack < 0:
        return np.zeros(0, dtype=int)
    raw = np.sort(rng.integers(0, slack + 1, size=k))
    return min_gap + raw + np.arange(k) * min_gap


def synth_generate(spec: SyntheticSpec) -> list[SyntheticVideo]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    duration = spec.T / spec.fps
    max_k = max(0, (spec.T - 2 * spec.min_gap) // spec.min_gap + 1)
    block = max(1, spec.C // spec.num_categories)
    videos = []
    for i in range(spec.num_videos):
        k = min(int(rng.poisson(spec.boundary_rate)) if spec.boundary_rate > 0 else 0, max_k)
        frames = _place_boundaries(rng, spec.T, k, spec.min_gap)
        cats = rng.integers(1, spec.num_categories + 1, size=len(frames))
        edges = np.concatenate([[0], frames, [spec.T]])
        means = np.empty((spec.T, spec.C))
        flow_means = np.empty((spec.T, spec.flow_C))
        seg_cats = np.concatenate([rng.integers(1, spec.num_categories + 1, size=1), cats])
        for j in range(len(edges) - 1):
            mu = rng.normal(0.0, spec.mean_scale, size=spec.C)
            c0 = ((seg_cats[j] - 1) * block) % spec.C
            mu[c0:c0 + block] += spec.category_shift
            means[edges[j]:edges[j + 1]] = mu
            flow_means[edges[j]:edges[j + 1]] = rng.normal(0.0, spec.mean_scale, size=spec.flow_C)
        feats = means + rng.normal(0.0, spec.noise_scale, size=means.shape)
        vid = f"{spec.prefix}{i:05d}"
        rgb = FrameFeatureSequence(vid, feats.astype(np.float32), spec.fps, duration)
        flow = None
        if spec.flow_C:
            fl = flow_means + rng.normal(0.0, spec.noise_scale, size=flow_means.shape)
            flow = FrameFeatureSequence(vid, fl.astype(np.float32), spec.fps, duration)
        times = [(f + 0.5) / spec.fps for f in frames]
        ann = BoundaryAnnotation(vid, duration, times, [int(c) for c in cats])
        videos.append(SyntheticVideo(rgb, flow, ann, frames))
    return videos

