"""
Ordered-residual-kernel affinity between tracked objects.

For every frame pair each visible object's model is evaluated on every other
visible object's pixels. An object's inliers are the t objects its model fits
best; two objects vote for each other in proportion to the inliers they share.
Votes are summed over frame pairs and divided by the number of pairs in which
both objects were visible.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence as SequenceType, Tuple

import numpy as np

from . import constants
from .exceptions import IoFailure, ValidationError
from .motion_model import MotionModel, PixelSample, model_residual
from .proposal_filter import TrackTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ResidualMatrix:
    """values[i][n]: residual of object i's model on object n's pixels; NaN when absent."""
    pair: int
    track_ids: Tuple[int, ...]
    values: np.ndarray

    @property
    def visible(self) -> np.ndarray:
        return ~np.isnan(np.diag(self.values))

    def row(self, track_id: int) -> np.ndarray:
        return self.values[self.track_ids.index(track_id)]


@dataclass(frozen=True, eq=False)
class InlierVector:
    index: int  # row of the object in the track ordering
    pair: int
    bits: np.ndarray  # (N,) bool

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    track_ids: Tuple[int, ...]
    sums: np.ndarray  # capped votes, each pair contributes at most 1
    raw_sums: np.ndarray  # uncapped v_i . v_j accumulated over pairs
    counts: np.ndarray  # frame pairs in which both objects were visible

    @property
    def values(self) -> np.ndarray:
        normalized = np.divide(
            self.sums, self.counts,
            out=np.zeros_like(self.sums, dtype=np.float64),
            where=self.counts > 0,
        )
        return (normalized + normalized.T) / 2.0

    @property
    def size(self) -> int:
        return len(self.track_ids)


def ork_threshold(n_visible: int, fraction: float = constants.ORK_FRACTION) -> int:
    """Inlier count t for a frame pair, rounded half up and at least 1."""
    return max(1, int(math.floor(fraction * n_visible + 0.5)))


def residual_matrix(models: Mapping[int, MotionModel], samples: Mapping[int, PixelSample],
                    pair: int, track_ids: SequenceType[int]) -> ResidualMatrix:
    """Cross-evaluate every visible object's model on every visible object's sample."""
    track_ids = tuple(track_ids)
    if set(models) != set(samples):
        raise ValidationError(
            f"pair {pair}: models cover {sorted(models)} but samples cover {sorted(samples)}"
        )
    values = np.full((len(track_ids), len(track_ids)), np.nan)
    visible = [(i, t) for i, t in enumerate(track_ids) if t in models]
    for i, owner in visible:
        for n, other in visible:
            values[i, n] = model_residual(models[owner], samples[other])
    return ResidualMatrix(pair=pair, track_ids=track_ids, values=values)


def ork_inliers(e_i: np.ndarray, t: int, index: int = 0, pair: int = 0,
                floor: float = constants.RESIDUAL_FLOOR) -> InlierVector:
    """Mark the min(t, visible) smallest residuals of a row.

    Residuals at or below floor count as exact fits and tie at zero. Ties go
    to the lower object index.
    """
    if t < 1:
        raise ValidationError(f"inlier count t must be at least 1, got {t}")
    e_i = np.asarray(e_i, dtype=np.float64)
    candidates = np.flatnonzero(~np.isnan(e_i))
    bits = np.zeros(e_i.shape, dtype=bool)
    if candidates.size:
        keys = np.where(e_i[candidates] <= floor, 0.0, e_i[candidates])
        order = np.argsort(keys, kind='stable')
        bits[candidates[order[:min(t, candidates.size)]]] = True
    return InlierVector(index=index, pair=pair, bits=bits)


def pair_inliers(residuals: ResidualMatrix, t: int,
                 floor: float = constants.RESIDUAL_FLOOR) -> List[InlierVector]:
    return [
        ork_inliers(residuals.values[i], t, index=i, pair=residuals.pair, floor=floor)
        for i in np.flatnonzero(residuals.visible)
    ]


def pair_votes(vectors: Iterable[InlierVector], n: int) -> np.ndarray:
    """Raw votes v_i . v_j of one frame pair."""
    bits = np.zeros((n, n), dtype=np.int64)
    for vector in vectors:
        bits[vector.index] = vector.bits
    return bits @ bits.T


def accumulate_similarity(inliers: Iterable[InlierVector], table: TrackTable) -> SimilarityMatrix:
    """Sum per-pair votes and count common frame pairs.

    Each pair's vote is divided by that pair's inlier count t so that a
    pair contributes at most 1.
    """
    n = len(table.track_ids)
    by_pair: Dict[int, List[InlierVector]] = {}
    for vector in inliers:
        by_pair.setdefault(vector.pair, []).append(vector)

    sums = np.zeros((n, n))
    raw_sums = np.zeros((n, n))
    for pair, vectors in sorted(by_pair.items()):
        votes = pair_votes(vectors, n)
        t = max(vector.count for vector in vectors)
        raw_sums += votes
        sums += votes / max(t, 1)

    counts = table.common_pairs.astype(np.float64)
    return SimilarityMatrix(track_ids=tuple(table.track_ids), sums=sums, raw_sums=raw_sums, counts=counts)


def write_affinity(path, similarity: SimilarityMatrix) -> Path:
    """Plain-text dump of the normalized matrix, one row per track."""
    path = Path(path)
    header = 'tracks: ' + ' '.join(str(t) for t in similarity.track_ids)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, similarity.values, fmt='%.6f', header=header)
    except OSError as e:
        raise IoFailure(f"{path}: {e}")
    logger.info(f"Wrote affinity matrix to {path}")
    return path
