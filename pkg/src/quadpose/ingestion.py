"""Video -> frame pipeline for real-data use.

The animal detector/segmenter is a pluggable interface: a callable that
takes an RGB frame and returns (confidence, binary mask) or None. Tests
and the CLI use deterministic stubs; production plugs in an external
pretrained model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

import cv2
import numpy as np

from .errors import ConfigurationError, QuadposeError

logger = logging.getLogger(__name__)

DEFAULT_MIN_CONFIDENCE = 0.9
DEFAULT_SIZE = 128

# Detector contract: frame (H, W, 3) uint8 -> (confidence in [0,1],
# mask (H, W) in {0,1}) or None when nothing is detected.
Detector = Callable[[np.ndarray], Optional[tuple]]


@dataclass(frozen=True)
class FrameRecord:
    source_id: str
    frame_index: int
    image_path: str
    mask_path: str
    confidence: float
    split: str = "train"


def split_video(path) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (index, frame) for every frame of a video, in order."""
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise QuadposeError(f"unreadable video container: {path}")
    index = 0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield index, frame
            index += 1
    finally:
        cap.release()


def video_frame_count(path) -> int:
    """Container-reported frame count (independent of iteration)."""
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise QuadposeError(f"unreadable video container: {path}")
    try:
        return int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    finally:
        cap.release()


def accept_all_detector(frame: np.ndarray):
    """Stub detector: full-frame mask at confidence 1.0."""
    return 1.0, np.ones(frame.shape[:2], dtype=np.uint8)


def filter_frames(frames: Iterable[tuple[int, np.ndarray]],
                  detector: Detector,
                  min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                  source_id: str = "video"):
    """Keep frames whose detection confidence clears the threshold.

    Yields (frame_index, frame, confidence, mask). Per-frame detector
    failures are logged and skipped; if more than half of all frames
    error out the run aborts.
    """
    errors = 0
    total = 0
    kept = []
    for index, frame in frames:
        total += 1
        try:
            result = detector(frame)
        except Exception as e:  # detector is third-party code
            errors += 1
            logger.warning("detector failed on %s frame %d: %s", source_id, index, e)
            continue
        if result is None:
            continue
        confidence, mask = result
        if confidence >= min_confidence:
            kept.append((index, frame, float(confidence), np.asarray(mask)))
    if total and errors > total / 2:
        raise QuadposeError(
            f"detector failed on {errors}/{total} frames of {source_id}")
    return kept


def resize_and_store(records, out_dir, size: int = DEFAULT_SIZE,
                     source_id: str = "video",
                     min_confidence_used: float = DEFAULT_MIN_CONFIDENCE) -> Path:
    """Resize frames (bilinear) and masks (nearest) and write a manifest.

    ``records`` is the output of :func:`filter_frames`. Re-running on
    unchanged inputs reproduces identical files.
    """
    if size <= 0:
        raise ConfigurationError("size must be positive")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    stored = []
    for index, frame, confidence, mask in records:
        img = cv2.resize(frame, (size, size), interpolation=cv2.INTER_LINEAR)
        msk = cv2.resize(mask.astype(np.uint8), (size, size),
                         interpolation=cv2.INTER_NEAREST)
        image_rel = f"frames/{source_id}_{index:06d}.png"
        mask_rel = f"masks/{source_id}_{index:06d}.png"
        if not cv2.imwrite(str(out / image_rel), img):
            raise QuadposeError(f"failed to write {out / image_rel}")
        if not cv2.imwrite(str(out / mask_rel), msk):
            raise QuadposeError(f"failed to write {out / mask_rel}")
        stored.append(FrameRecord(
            source_id=source_id,
            frame_index=index,
            image_path=image_rel,
            mask_path=mask_rel,
            confidence=confidence,
        ))
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as f:
        for rec in stored:
            f.write(json.dumps(asdict(rec)) + "\n")
    return manifest


def ingest_video(path, detector: Detector, out_dir,
                 min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                 size: int = DEFAULT_SIZE) -> Path:
    """Full pipeline for one local video file: split, filter, store."""
    source_id = Path(path).stem
    frames = split_video(path)
    kept = filter_frames(frames, detector, min_confidence, source_id)
    return resize_and_store(kept, out_dir, size, source_id, min_confidence)


def load_manifest(path) -> list[FrameRecord]:
    records = []
    with open(path) as f:
        for line in f:
            records.append(FrameRecord(**json.loads(line)))
    return records
