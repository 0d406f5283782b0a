"""
Scoring of predicted segmentations against ground truth.

Mask metrics match predicted regions to ground-truth moving-object regions
one-to-one by maximum total IoU, then per frame

    Pu = sum of matched |P & G| / sum of all |P|
    Ru = sum of matched |P & G| / sum of all |G|

Sequence scores average the frames with nonempty ground truth. Fu is the
harmonic mean of the sequence Pu and Ru.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

from . import constants
from .clustering import Labeling
from .cues import read_masks, read_yaml, write_yaml
from .exceptions import DimensionMismatch, IoFailure, MissingFile, TrackSetMismatch, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskMatching:
    pairs: Tuple[Tuple[int, int, float, int], ...]  # (pred label, gt label, IoU, intersection)
    unmatched_pred: Tuple[int, ...]
    unmatched_gt: Tuple[int, ...]
    pred_area: int
    gt_area: int

    @property
    def matched_intersection(self) -> int:
        return sum(pair[3] for pair in self.pairs)


@dataclass(frozen=True)
class FrameScore:
    frame: int
    pu: float
    ru: float
    fu: float
    gt_empty: bool
    pred_regions: int
    gt_regions: int


@dataclass(frozen=True)
class EvalReport:
    pu: float
    ru: float
    fu: float
    ari: Optional[float] = None
    frames: Tuple[FrameScore, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict:
        return {
            'pu': self.pu,
            'ru': self.ru,
            'fu': self.fu,
            'ari': self.ari,
            'frame_count': len(self.frames),
        }


def f_score(pu: float, ru: float) -> float:
    return 2 * pu * ru / (pu + ru) if pu + ru > 0 else 0.0


def _regions(labels: np.ndarray, background: Optional[int]) -> Dict[int, np.ndarray]:
    ignored = {constants.UNASSIGNED_LABEL}
    if background is not None:
        ignored.add(background)
    return {int(label): labels == label for label in np.unique(labels) if label not in ignored}


def match_masks(pred: np.ndarray, gt: np.ndarray,
                pred_background: Optional[int] = None,
                gt_background: Optional[int] = None) -> MaskMatching:
    """Maximum-total-IoU one-to-one matching of predicted and ground-truth regions.

    Pairs with zero overlap are never matched.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction is {pred.shape}, ground truth is {gt.shape}")

    pred_regions = _regions(pred, pred_background)
    gt_regions = _regions(gt, gt_background)
    pred_ids, gt_ids = list(pred_regions), list(gt_regions)

    intersection = np.zeros((len(pred_ids), len(gt_ids)), dtype=np.int64)
    iou = np.zeros((len(pred_ids), len(gt_ids)))
    for i, p in enumerate(pred_ids):
        for j, g in enumerate(gt_ids):
            inter = np.count_nonzero(pred_regions[p] & gt_regions[g])
            union = np.count_nonzero(pred_regions[p] | gt_regions[g])
            intersection[i, j] = inter
            iou[i, j] = inter / union if union else 0.0

    pairs = []
    if iou.size:
        rows, cols = linear_sum_assignment(iou, maximize=True)
        pairs = [
            (pred_ids[i], gt_ids[j], float(iou[i, j]), int(intersection[i, j]))
            for i, j in zip(rows, cols) if iou[i, j] > 0
        ]
    matched_pred = {p for p, _, _, _ in pairs}
    matched_gt = {g for _, g, _, _ in pairs}
    return MaskMatching(
        pairs=tuple(pairs),
        unmatched_pred=tuple(p for p in pred_ids if p not in matched_pred),
        unmatched_gt=tuple(g for g in gt_ids if g not in matched_gt),
        pred_area=int(sum(np.count_nonzero(m) for m in pred_regions.values())),
        gt_area=int(sum(np.count_nonzero(m) for m in gt_regions.values())),
    )


def score_frame(index: int, pred: np.ndarray, gt: np.ndarray,
                pred_background: Optional[int] = None,
                gt_background: Optional[int] = None) -> FrameScore:
    matching = match_masks(pred, gt, pred_background, gt_background)
    hit = matching.matched_intersection
    if matching.gt_area == 0:
        pu = 1.0 if matching.pred_area == 0 else 0.0
        ru = 1.0 if matching.pred_area == 0 else 0.0
    else:
        pu = hit / matching.pred_area if matching.pred_area else 0.0
        ru = hit / matching.gt_area
    return FrameScore(
        frame=index, pu=pu, ru=ru, fu=f_score(pu, ru), gt_empty=matching.gt_area == 0,
        pred_regions=len(matching.pairs) + len(matching.unmatched_pred),
        gt_regions=len(matching.pairs) + len(matching.unmatched_gt),
    )


def prf_metrics(pred: SequenceType[np.ndarray], gt: SequenceType[np.ndarray],
                pred_background: Optional[int] = None,
                gt_background: Optional[int] = None,
                ari: Optional[float] = None) -> EvalReport:
    if len(pred) != len(gt):
        raise ValidationError(f"prediction has {len(pred)} frames, ground truth has {len(gt)}")
    if not len(gt):
        raise ValidationError("nothing to evaluate: no frames")

    frames = tuple(
        score_frame(index, p, g, pred_background, gt_background)
        for index, (p, g) in enumerate(zip(pred, gt))
    )
    counted = [f for f in frames if not f.gt_empty] or list(frames)
    pu = float(np.mean([f.pu for f in counted]))
    ru = float(np.mean([f.ru for f in counted]))
    return EvalReport(pu=pu, ru=ru, fu=f_score(pu, ru), ari=ari, frames=frames)


def adjusted_rand(pred: Labeling, gt: Labeling) -> float:
    if set(pred.track_ids) != set(gt.track_ids):
        raise TrackSetMismatch(
            f"prediction covers tracks {sorted(pred.track_ids)}, ground truth {sorted(gt.track_ids)}"
        )
    truth = gt.as_dict()
    return float(adjusted_rand_score([truth[t] for t in pred.track_ids], list(pred.labels)))


@dataclass(frozen=True, eq=False)
class LabelDir:
    """Per-frame label images plus whatever segmentation.yaml says about them."""
    path: Path
    frames: List[np.ndarray]
    background_label: Optional[int] = None
    labeling: Optional[Labeling] = None


def load_label_dir(path) -> LabelDir:
    path = Path(path)
    if not path.is_dir():
        raise MissingFile(f"{path}: not a directory")

    meta_path = path / constants.SEGMENTATION_FILE
    if meta_path.exists():
        document = read_yaml(meta_path)
        names = document.get('frames') or []
        frames = [read_masks(path / name).labels for name in names]
        groups = document.get('groups')
        labeling = Labeling.from_dict({int(t): int(g) for t, g in groups.items()}) if groups else None
        return LabelDir(path=path, frames=frames,
                        background_label=document.get('background_label'), labeling=labeling)

    files = sorted(path.glob('*.png')) or sorted((path / 'masks').glob('*.png'))
    if not files:
        raise MissingFile(f"{path}: no label images found")
    return LabelDir(path=path, frames=[read_masks(f).labels for f in files])


def evaluate_dirs(pred_dir, gt_dir) -> EvalReport:
    pred = load_label_dir(pred_dir)
    gt = load_label_dir(gt_dir)
    if len(pred.frames) != len(gt.frames):
        raise ValidationError(
            f"{pred.path} has {len(pred.frames)} frames but {gt.path} has {len(gt.frames)}"
        )

    ari = None
    if pred.labeling is not None and gt.labeling is not None:
        try:
            ari = adjusted_rand(pred.labeling, gt.labeling)
        except TrackSetMismatch as e:
            logger.warning(f"Skipping ARI: {e}")
    return prf_metrics(pred.frames, gt.frames, pred.background_label, gt.background_label, ari=ari)


def write_report(path, report: EvalReport) -> Tuple[Path, Path]:
    """YAML summary at path and a per-frame CSV next to it."""
    path = Path(path)
    csv_path = path.with_suffix('.csv')
    write_yaml(path, report.to_dict())
    try:
        with open(csv_path, 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=[name for name in FrameScore.__dataclass_fields__])
            writer.writeheader()
            for frame in report.frames:
                writer.writerow(asdict(frame))
    except OSError as e:
        raise IoFailure(f"{csv_path}: {e}")
    logger.info(f"Wrote evaluation report to {path} and {csv_path}")
    return path, csv_path
