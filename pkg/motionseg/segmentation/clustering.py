"""
Spectral clustering of objects into motion groups, background selection and
rendering of per-frame motion-label masks.
"""

import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence as SequenceType, Tuple

import numpy as np
import scipy.linalg
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from . import constants
from .cues import MaskFrame, Sequence, write_masks, write_yaml
from .exceptions import InvalidK, TrackSetMismatch, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Labeling:
    """Track id → motion group in 0..K-1, plus the group treated as background."""
    track_ids: Tuple[int, ...]
    labels: Tuple[int, ...]
    background_group: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'track_ids', tuple(int(t) for t in self.track_ids))
        object.__setattr__(self, 'labels', tuple(int(g) for g in self.labels))
        if len(self.track_ids) != len(self.labels):
            raise ValidationError(f"{len(self.track_ids)} tracks but {len(self.labels)} labels")
        if len(set(self.track_ids)) != len(self.track_ids):
            raise ValidationError(f"labeling has duplicate track ids: {list(self.track_ids)}")
        if any(g < 0 for g in self.labels):
            raise ValidationError("group labels must be non-negative")

    @classmethod
    def from_dict(cls, groups: Dict[int, int], background_group: Optional[int] = None) -> 'Labeling':
        track_ids = sorted(int(t) for t in groups)
        return cls(track_ids=tuple(track_ids), labels=tuple(int(groups[t]) for t in track_ids),
                   background_group=background_group)

    def group_of(self, track_id: int) -> int:
        try:
            return self.labels[self.track_ids.index(track_id)]
        except ValueError:
            raise TrackSetMismatch(f"track {track_id} is not in the labeling")

    def as_dict(self) -> Dict[int, int]:
        return dict(zip(self.track_ids, self.labels))

    @property
    def groups(self) -> Dict[int, List[int]]:
        members: Dict[int, List[int]] = {}
        for track_id, group in zip(self.track_ids, self.labels):
            members.setdefault(group, []).append(track_id)
        return dict(sorted(members.items()))

    @property
    def num_groups(self) -> int:
        return len(set(self.labels))

    @property
    def moving_groups(self) -> List[int]:
        return [g for g in self.groups if g != self.background_group]


def _canonical(labels: SequenceType[int]) -> Tuple[int, ...]:
    """Relabel groups in order of first appearance."""
    mapping: Dict[int, int] = {}
    for label in labels:
        mapping.setdefault(int(label), len(mapping))
    return tuple(mapping[int(label)] for label in labels)


def spectral_embedding(d: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized top-k eigenvectors of D^-1/2 d D^-1/2."""
    degree = d.sum(axis=1)
    isolated = degree <= 0
    inv_sqrt = 1.0 / np.sqrt(np.where(isolated, 1.0, degree))
    affinity = inv_sqrt[:, None] * d * inv_sqrt[None, :]

    n = d.shape[0]
    _, vectors = scipy.linalg.eigh(affinity, subset_by_index=[n - k, n - 1])
    embedding = vectors[:, ::-1].copy()
    embedding[isolated] = 0.0

    norms = np.linalg.norm(embedding, axis=1)
    nonzero = norms > 0
    embedding[nonzero] /= norms[nonzero, None]
    return embedding


def farthest_point_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded greedy farthest-point initialization for k-means."""
    centers = [points[rng.integers(points.shape[0])]]
    distances = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        centers.append(points[int(np.argmax(distances))])
        distances = np.minimum(distances, np.sum((points - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def spectral_cluster(d, k: int, seed=constants.DEFAULT_SEED,
                     track_ids: Optional[SequenceType[int]] = None,
                     restarts: int = constants.KMEANS_RESTARTS,
                     max_iter: int = constants.KMEANS_MAX_ITER) -> Labeling:
    """Partition objects into k motion groups.

    d is a SimilarityMatrix or a square array. Zero-degree objects get a zero
    embedding row and end up in one shared cluster.
    """
    if hasattr(d, 'values') and hasattr(d, 'track_ids'):
        track_ids = d.track_ids if track_ids is None else track_ids
        d = d.values
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"similarity must be square, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValidationError("similarity must be finite and nonnegative")
    n = d.shape[0]
    track_ids = tuple(range(1, n + 1)) if track_ids is None else tuple(track_ids)
    if len(track_ids) != n:
        raise TrackSetMismatch(f"{len(track_ids)} track ids for a {n}x{n} similarity")
    if k < 1 or k > n:
        raise InvalidK(f"--num-motions must be between 1 and {n}, got {k}")

    embedding = spectral_embedding((d + d.T) / 2.0, k)

    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed_seq)
    best_labels, best_inertia = None, np.inf
    for restart in range(restarts):
        init = farthest_point_init(embedding, k, rng)
        km = KMeans(n_clusters=k, init=init, n_init=1, max_iter=max_iter,
                    random_state=int(rng.integers(2 ** 31 - 1)))
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ConvergenceWarning)
            km.fit(embedding)
        if km.inertia_ < best_inertia:
            best_labels, best_inertia = km.labels_, km.inertia_
    logger.debug(f"k-means best inertia {best_inertia:.3g} over {restarts} restarts")

    return Labeling(track_ids=track_ids, labels=_canonical(best_labels))


def _partitions(n: int, k: int) -> Iterator[Tuple[int, ...]]:
    """All assignments of n items to exactly k nonempty groups, in canonical form."""
    def grow(prefix: List[int], used: int) -> Iterator[Tuple[int, ...]]:
        remaining = n - len(prefix)
        if remaining == 0:
            if used == k:
                yield tuple(prefix)
            return
        if k - used > remaining:
            return
        for label in range(min(used + 1, k)):
            yield from grow(prefix + [label], max(used, label + 1))
    yield from grow([], 0)


def normalized_cut(d: np.ndarray, labels: SequenceType[int]) -> float:
    d = np.asarray(d, dtype=np.float64)
    labels = np.asarray(labels)
    degree = d.sum(axis=1)
    total = 0.0
    for group in np.unique(labels):
        inside = labels == group
        volume = degree[inside].sum()
        if volume > 0:
            total += d[np.ix_(inside, ~inside)].sum() / volume
    return total


def best_partition_bruteforce(d, k: int, max_objects: int = 10) -> Tuple[int, ...]:
    """Exhaustive minimum normalized cut over all k-partitions; for small test oracles."""
    d = np.asarray(getattr(d, 'values', d), dtype=np.float64)
    n = d.shape[0]
    if k < 1 or k > n:
        raise InvalidK(f"k must be between 1 and {n}, got {k}")
    if n > max_objects:
        raise ValidationError(f"brute force is limited to {max_objects} objects, got {n}")
    return min(_partitions(n, k), key=lambda labels: normalized_cut(d, labels))


def assign_background(lab: Labeling, seq: Sequence, background_track: Optional[int] = None) -> Labeling:
    """Mark the group with the largest total pixel area, or the group of background_track."""
    if background_track is not None:
        group = lab.group_of(background_track)
        logger.info(f"Background forced to group {group} (track {background_track})")
        return replace(lab, background_group=group)

    areas: Dict[int, int] = {}
    for track_id, group in zip(lab.track_ids, lab.labels):
        areas[group] = areas.get(group, 0) + seq.area(track_id)
    group = min(areas, key=lambda g: (-areas[g], g))
    logger.info(f"Background is group {group} ({areas[group]} pixels over the sequence)")
    return replace(lab, background_group=group)


def binary_labels(lab: Labeling) -> Labeling:
    """Project onto static (0) and moving (1)."""
    if lab.background_group is None:
        raise ValidationError("binary output needs a background group")
    return Labeling(
        track_ids=lab.track_ids,
        labels=tuple(0 if g == lab.background_group else 1 for g in lab.labels),
        background_group=0,
    )


def render_segmentation(lab: Labeling, seq: Sequence, binary: bool = False) -> List[MaskFrame]:
    """Per-frame label images: group g → g + 1, 0 unassigned.

    In binary mode moving pixels are 1 and everything else 0.
    """
    lookup = lab.as_dict()
    if binary:
        lookup = {t: (0 if g == 0 else 1) for t, g in binary_labels(lab).as_dict().items()}
    else:
        lookup = {t: g + 1 for t, g in lookup.items()}

    frames = []
    for mask in seq.masks:
        out = np.zeros_like(mask.labels)
        for track_id in mask.track_ids:
            if track_id in lookup:
                out[mask.labels == track_id] = lookup[track_id]
        frames.append(MaskFrame(width=mask.width, height=mask.height, labels=out))
    return frames


def background_label(lab: Labeling, binary: bool = False) -> Optional[int]:
    """Pixel value of the background group in rendered masks."""
    if binary or lab.background_group is None:
        return None
    return lab.background_group + 1


def write_segmentation(out_dir, frames: SequenceType[MaskFrame], lab: Labeling,
                       binary: bool = False, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write masks/NNNN.png and the segmentation.yaml that describes them."""
    out_dir = Path(out_dir)
    names = []
    for index, frame in enumerate(frames):
        name = f"masks/{index:04d}.png"
        write_masks(out_dir / name, frame)
        names.append(name)

    document: Dict[str, Any] = {
        'frames': names,
        'binary': binary,
        'background_label': background_label(lab, binary),
        'num_groups': lab.num_groups,
        'groups': {int(t): int(g) for t, g in lab.as_dict().items()},
    }
    if extra:
        document.update(extra)
    return write_yaml(out_dir / constants.SEGMENTATION_FILE, document)
