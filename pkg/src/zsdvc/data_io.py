"""Ground-truth loading, frame sampling and the binary frame-feature cache.

Cache layout (all little-endian)::

    offset 0   4 bytes   magic b"ZTAF"
    offset 4   u16       format version
    offset 6   u32       frame count L (> 0)
    offset 10  u32       feature dimension D (> 0)
    offset 14  L*D f32   row-major payload

Each cache ``x.ztaf`` has a sidecar ``x.ztaf.json`` holding the video id,
duration in seconds, sampling rate and the id of the scorer that produced the
embeddings.
"""
from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheError, FormatError, ScorerMismatchError, TruncatedCacheError

log = logging.getLogger(__name__)

MAGIC = b"ZTAF"
VERSION = 1
HEADER = struct.Struct("<4sHII")
CACHE_SUFFIX = ".ztaf"


def _file_mode() -> int:
    # mkstemp creates 0600 files; give outputs the usual umask-derived mode
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, _file_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- ground truth --------------------------------------------------------------

@dataclass
class VideoAnnotation:
    duration: float
    segments: list = field(default_factory=list)  # [((start, end), sentence), ...]

    def to_json(self) -> dict:
        return {
            "duration": self.duration,
            "timestamps": [[s, e] for (s, e), _ in self.segments],
            "sentences": [sent for _, sent in self.segments],
        }


def parse_ground_truth(data, strict: bool = True) -> dict[str, VideoAnnotation]:
    """Validate ActivityNet-Captions style ground truth.

    With ``strict=False`` segments that run past the duration are clipped (with a
    warning) instead of rejected; the public ActivityNet files contain a few.
    """
    if not isinstance(data, dict):
        raise FormatError("ground truth must be a JSON object keyed by video id")
    out = {}
    for vid, entry in data.items():
        where = str(vid)
        if not isinstance(entry, dict):
            raise FormatError("entry must be an object", where)
        for key in ("duration", "timestamps", "sentences"):
            if key not in entry:
                raise FormatError(f"missing field {key!r}", where)
        try:
            duration = float(entry["duration"])
        except (TypeError, ValueError):
            raise FormatError("duration must be a number", f"{where}.duration") from None
        if not math.isfinite(duration) or duration < 0:
            raise FormatError(f"invalid duration {entry['duration']!r}", f"{where}.duration")
        stamps, sents = entry["timestamps"], entry["sentences"]
        if not isinstance(stamps, list) or not isinstance(sents, list) or len(stamps) != len(sents):
            raise FormatError("timestamps and sentences must be lists of equal length", where)
        segments = []
        for k, (ts, sent) in enumerate(zip(stamps, sents)):
            fw = f"{where}.timestamps[{k}]"
            if not isinstance(ts, (list, tuple)) or len(ts) != 2:
                raise FormatError("timestamp must be a [start, end] pair", fw)
            try:
                s, e = float(ts[0]), float(ts[1])
            except (TypeError, ValueError):
                raise FormatError("timestamp entries must be numbers", fw) from None
            if s > e:
                raise FormatError(f"start {s} after end {e} in video {vid}", fw)
            if s < 0 or e > duration:
                if strict:
                    raise FormatError(f"segment [{s}, {e}] outside [0, {duration}] in video {vid}", fw)
                log.warning("%s: clipping [%s, %s] to [0, %s]", fw, s, e, duration)
                s, e = min(max(s, 0.0), duration), min(max(e, 0.0), duration)
            if not isinstance(sent, str):
                raise FormatError("sentence must be a string", f"{where}.sentences[{k}]")
            segments.append(((s, e), sent.strip()))
        out[str(vid)] = VideoAnnotation(duration, segments)
    return out


def load_ground_truth(path, strict: bool = True) -> dict[str, VideoAnnotation]:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed ground truth JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                          str(path)) from exc
    try:
        return parse_ground_truth(data, strict=strict)
    except FormatError as exc:
        msg = str(exc)[len(exc.where) + 2:] if exc.where else str(exc)
        raise FormatError(msg, f"{path}:{exc.where}" if exc.where else str(path)) from exc


def dump_ground_truth(gt: dict[str, VideoAnnotation], path=None) -> str:
    text = json.dumps({k: gt[k].to_json() for k in sorted(gt)}, indent=1, sort_keys=True) + "\n"
    if path is not None:
        atomic_write_text(path, text)
    return text


# -- sampling ----------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    """One frame per second, taken at the center of each second."""

    rate: float = 1.0

    def frame_count(self, duration: float) -> int:
        # round half down, so the last second-center stays strictly before the end
        return max(1, int(math.ceil(duration * self.rate - 0.5)))

    def timestamps(self, duration: float) -> list[float]:
        if not duration > 0:
            raise FormatError(f"video duration must be positive, got {duration}")
        n = self.frame_count(duration)
        if n == 1:
            return [min(0.5 / self.rate, duration / 2)]
        return [(j - 0.5) / self.rate for j in range(1, n + 1)]


# -- feature cache -----------------------------------------------------------

@dataclass
class FeatureCache:
    features: np.ndarray  # L x D float32
    video_id: str
    duration: float
    sampling_rate: float = 1.0
    scorer_id: str = ""

    @property
    def meta(self) -> dict:
        return {"video_id": self.video_id, "duration": self.duration,
                "sampling_rate": self.sampling_rate, "scorer_id": self.scorer_id}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_cache(features) -> bytes:
    arr = np.ascontiguousarray(np.asarray(features, dtype="<f4"))
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise CacheError(f"features must be a non-empty L x D matrix, got shape {arr.shape}")
    return HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]) + arr.tobytes()


def decode_cache(blob: bytes, where=None) -> np.ndarray:
    if len(blob) < HEADER.size:
        raise TruncatedCacheError(HEADER.size, len(blob), where)
    magic, version, n, d = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CacheError(f"bad magic {magic!r}", where)
    if version != VERSION:
        raise CacheError(f"unsupported cache version {version}", where)
    if n == 0 or d == 0:
        raise CacheError(f"empty feature matrix {n} x {d}", where)
    expected = n * d * 4
    actual = len(blob) - HEADER.size
    if actual != expected:
        raise TruncatedCacheError(expected, actual, where)
    return np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(n, d).copy()


def write_feature_cache(path, cache: FeatureCache):
    atomic_write_bytes(path, encode_cache(cache.features))
    atomic_write_text(sidecar_path(path), json.dumps(cache.meta, indent=1, sort_keys=True) + "\n")


def read_feature_cache(path, scorer_id: str | None = None, strict: bool = False) -> FeatureCache:
    path = Path(path)
    features = decode_cache(path.read_bytes(), str(path))
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise CacheError("missing sidecar metadata", str(side)) from None
    except json.JSONDecodeError as exc:
        raise CacheError(f"malformed sidecar: {exc.msg}", str(side)) from exc
    cache = FeatureCache(features, str(meta.get("video_id", path.stem)), float(meta["duration"]),
                         float(meta.get("sampling_rate", 1.0)), str(meta.get("scorer_id", "")))
    if scorer_id is not None and cache.scorer_id != scorer_id:
        msg = f"cache embedded with {cache.scorer_id!r}, run uses {scorer_id!r}"
        if strict:
            raise ScorerMismatchError(msg, str(path))
        log.warning("%s: %s", path, msg)
    return cache


# -- extraction --------------------------------------------------------------

def decode_frames(video_path, sampling: SamplingSpec = SamplingSpec()):
    """Decode the sampled RGB frames with OpenCV. Returns (frames, duration, timestamps)."""
    import cv2

    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise FormatError("cannot open video", str(video_path))
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        count = cap.get(cv2.CAP_PROP_FRAME_COUNT) or 0.0
        if fps <= 0 or count <= 0:
            raise FormatError("video reports no frames", str(video_path))
        duration = count / fps
        stamps = sampling.timestamps(duration)
        frames = []
        for t in stamps:
            cap.set(cv2.CAP_PROP_POS_FRAMES, min(int(t * fps), int(count) - 1))
            ok, frame = cap.read()
            if not ok:
                raise FormatError(f"cannot decode frame at {t:.2f}s", str(video_path))
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    return frames, duration, stamps


def extract_features(video_path, scorer, sampling: SamplingSpec = SamplingSpec(),
                     video_id: str | None = None) -> FeatureCache:
    """Embed the sampled frames of one video with an image-capable scorer."""
    if not hasattr(scorer, "embed_images"):
        raise TypeError(f"scorer {scorer.config.model_id!r} cannot embed images")
    frames, duration, _ = decode_frames(video_path, sampling)
    emb = np.asarray(scorer.embed_images(frames), dtype=np.float64)
    emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
    return FeatureCache(emb.astype(np.float32), video_id or Path(video_path).stem, duration,
                        sampling.rate, scorer.config.model_id)
