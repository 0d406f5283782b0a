"""
Proposal post-processing: suppression of overlapping and oversized masks and
the per-frame-pair visibility table used to normalize similarities.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Set, Tuple

import numpy as np

from . import constants
from .cues import MaskFrame, Sequence
from .exceptions import DimensionMismatch

logger = logging.getLogger(__name__)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def suppressed_tracks(masks: Mapping[int, np.ndarray], image_area: int,
                      iou_threshold: float = constants.IOU_THRESHOLD,
                      max_area_fraction: float = constants.MAX_AREA_FRACTION) -> Set[int]:
    """Track ids removed by the suppression rule, judged on the given masks.

    A track goes if its area exceeds max_area_fraction of the image, or if it
    overlaps another track by IoU > iou_threshold and is the smaller of the
    two (the higher id on equal areas).
    """
    areas = {track_id: int(np.count_nonzero(mask)) for track_id, mask in masks.items()}
    removed = {t for t, area in areas.items() if area > max_area_fraction * image_area}

    ids = sorted(masks)
    for i, first in enumerate(ids):
        for second in ids[i + 1:]:
            if mask_iou(masks[first], masks[second]) <= iou_threshold:
                continue
            if areas[first] == areas[second]:
                loser = max(first, second)
            else:
                loser = first if areas[first] < areas[second] else second
            removed.add(loser)
    return removed


def filter_proposal_masks(masks: Mapping[int, np.ndarray], shape: Tuple[int, int],
                          iou_threshold: float = constants.IOU_THRESHOLD,
                          max_area_fraction: float = constants.MAX_AREA_FRACTION) -> Dict[int, np.ndarray]:
    """Apply suppression to raw, possibly overlapping, binary proposals."""
    for track_id, mask in masks.items():
        if np.shape(mask) != tuple(shape):
            raise DimensionMismatch(f"proposal {track_id} is {np.shape(mask)}, expected {tuple(shape)}")
    removed = suppressed_tracks(masks, shape[0] * shape[1], iou_threshold, max_area_fraction)
    return {t: np.asarray(m, dtype=bool) for t, m in masks.items() if t not in removed}


def filter_proposals(frame: MaskFrame,
                     iou_threshold: float = constants.IOU_THRESHOLD,
                     max_area_fraction: float = constants.MAX_AREA_FRACTION) -> MaskFrame:
    """Return the frame with suppressed tracks set to unassigned."""
    removed = suppressed_tracks(
        frame.track_masks(), frame.width * frame.height, iou_threshold, max_area_fraction
    )
    if not removed:
        return frame
    labels = np.where(np.isin(frame.labels, sorted(removed)), constants.UNASSIGNED_LABEL, frame.labels)
    return MaskFrame(width=frame.width, height=frame.height, labels=labels)


def filter_sequence(seq: Sequence,
                    iou_threshold: float = constants.IOU_THRESHOLD,
                    max_area_fraction: float = constants.MAX_AREA_FRACTION) -> Sequence:
    filtered = [filter_proposals(mask, iou_threshold, max_area_fraction) for mask in seq.masks]
    dropped = sum(len(before.track_ids) - len(after.track_ids) for before, after in zip(seq.masks, filtered))
    if dropped:
        logger.info(f"Proposal filtering removed {dropped} track/frame masks")
    return seq.with_masks(filtered)


@dataclass(frozen=True, eq=False)
class TrackTable:
    """Per frame pair visibility and pixel counts of every registered track."""
    track_ids: Tuple[int, ...]
    pixel_counts: np.ndarray  # (frame_count, N) pixels per track per frame
    visible: np.ndarray  # (pair_count, N) bool
    min_pixels: int

    def index(self, track_id: int) -> int:
        return self.track_ids.index(track_id)

    def is_visible(self, track_id: int, pair: int) -> bool:
        return bool(self.visible[pair, self.index(track_id)])

    def pixel_count(self, track_id: int, frame: int) -> int:
        return int(self.pixel_counts[frame, self.index(track_id)])

    def visible_tracks(self, pair: int) -> Tuple[int, ...]:
        return tuple(t for t, seen in zip(self.track_ids, self.visible[pair]) if seen)

    @property
    def common_pairs(self) -> np.ndarray:
        """cnt[i][j]: frame pairs in which tracks i and j are both visible."""
        visible = self.visible.astype(np.int64)
        return visible.T @ visible


def build_track_table(seq: Sequence, min_pixels: int = constants.MIN_PIXELS,
                      track_ids: Iterable[int] = None) -> TrackTable:
    track_ids = tuple(seq.track_ids if track_ids is None else track_ids)
    counts = np.array(
        [[mask.pixel_count(t) for t in track_ids] for mask in seq.masks], dtype=np.int64
    ).reshape(seq.frame_count, len(track_ids))
    present = counts >= min_pixels
    visible = present[:-1] & present[1:]
    return TrackTable(track_ids=track_ids, pixel_counts=counts, visible=visible, min_pixels=min_pixels)
