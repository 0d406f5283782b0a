"""
End-to-end segmentation: filter → sample → fit → residuals → ORK → similarity
→ spectral clustering → rendered label masks.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from django.conf import settings

from . import constants
from .affinity import (
    InlierVector,
    ResidualMatrix,
    SimilarityMatrix,
    accumulate_similarity,
    ork_threshold,
    pair_inliers,
    residual_matrix,
    write_affinity,
)
from .clustering import (
    Labeling,
    assign_background,
    render_segmentation,
    spectral_cluster,
    write_segmentation,
)
from .cues import MaskFrame, Sequence, load_sequence
from .exceptions import ValidationError
from .motion_model import fit_model, normalize_coords, sample_pixels
from .proposal_filter import TrackTable, build_track_table, filter_sequence
from .seeding import STAGE_KMEANS, STAGE_SAMPLING, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one segmentation run."""
    num_motions: int
    manifest: Optional[Path] = None
    output_dir: Optional[Path] = None
    motion_model: str = constants.MODEL_LINEAR_DEPTH
    ablation: str = constants.ABLATION_FULL
    ork_fraction: float = constants.ORK_FRACTION
    inliers: Optional[int] = None  # fixed t for every pair, overrides ork_fraction
    seed: int = constants.DEFAULT_SEED
    iou_threshold: float = constants.IOU_THRESHOLD
    max_area_fraction: float = constants.MAX_AREA_FRACTION
    min_pixels: int = constants.MIN_PIXELS
    max_samples: int = constants.MAX_SAMPLES
    quorum: int = constants.FIT_QUORUM
    binary: bool = False
    background_track: Optional[int] = None
    dump_affinity: Optional[Path] = None
    threads: int = constants.THREADS

    def __post_init__(self):
        if self.num_motions < 1:
            raise ValidationError(f"--num-motions must be at least 1, got {self.num_motions}")
        if self.ablation not in constants.ABLATION_MODES:
            raise ValidationError(f"--ablation must be one of {', '.join(constants.ABLATION_MODES)}")
        if self.motion_model not in constants.MOTION_MODELS:
            raise ValidationError(f"--motion-model must be one of {', '.join(constants.MOTION_MODELS)}")
        if not 0 < self.ork_fraction <= 1:
            raise ValidationError(f"--ork-fraction must be in (0, 1], got {self.ork_fraction}")
        if self.inliers is not None and self.inliers < 1:
            raise ValidationError(f"--inliers must be at least 1, got {self.inliers}")
        if not 0 <= self.iou_threshold <= 1:
            raise ValidationError(f"--iou-threshold must be in [0, 1], got {self.iou_threshold}")
        if not 0 < self.max_area_fraction <= 1:
            raise ValidationError(f"--max-area-fraction must be in (0, 1], got {self.max_area_fraction}")
        if self.max_samples < 1 or self.min_pixels < 1:
            raise ValidationError("--max-samples and --min-pixels must be positive")
        if self.threads < 1:
            raise ValidationError(f"thread count must be at least 1, got {self.threads}")
        if self.binary and self.ablation == constants.ABLATION_PROPOSALS:
            raise ValidationError("--binary needs a background group; proposals-baseline has none")

    @classmethod
    def from_settings(cls, **overrides: Any) -> 'RunConfig':
        """Defaults from settings.MOTIONSEG, then explicit overrides (None means unset)."""
        configured = getattr(settings, 'MOTIONSEG', {})
        values = {
            'motion_model': configured.get('MOTION_MODEL', constants.MODEL_LINEAR_DEPTH),
            'ork_fraction': configured.get('ORK_FRACTION', constants.ORK_FRACTION),
            'iou_threshold': configured.get('IOU_THRESHOLD', constants.IOU_THRESHOLD),
            'max_area_fraction': configured.get('MAX_AREA_FRACTION', constants.MAX_AREA_FRACTION),
            'min_pixels': configured.get('MIN_PIXELS', constants.MIN_PIXELS),
            'max_samples': configured.get('MAX_SAMPLES', constants.MAX_SAMPLES),
            'quorum': configured.get('FIT_QUORUM', constants.FIT_QUORUM),
            'seed': configured.get('SEED', constants.DEFAULT_SEED),
            'threads': configured.get('THREADS', constants.THREADS),
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        for key in ('manifest', 'output_dir', 'dump_affinity'):
            if values.get(key) is not None:
                values[key] = Path(values[key])
        return cls(**values)

    @property
    def effective_model(self) -> str:
        if self.ablation == constants.ABLATION_FLOW_ONLY:
            return constants.MODEL_QUADRATIC
        return self.motion_model

    def to_dict(self) -> Dict[str, Any]:
        return {
            'num_motions': self.num_motions,
            'motion_model': self.effective_model,
            'ablation': self.ablation,
            'ork_fraction': self.ork_fraction,
            'inliers': self.inliers,
            'seed': self.seed,
            'iou_threshold': self.iou_threshold,
            'max_area_fraction': self.max_area_fraction,
            'min_pixels': self.min_pixels,
            'max_samples': self.max_samples,
        }


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    labeling: Labeling
    frames: List[MaskFrame]
    sequence: Sequence  # after proposal filtering
    table: TrackTable
    similarity: Optional[SimilarityMatrix] = None
    residuals: List[ResidualMatrix] = field(default_factory=list)


class SegmentationService:
    """Runs the segmentation pipeline on loaded sequences."""

    def surviving_tracks(self, seq: Sequence) -> Tuple[int, ...]:
        return tuple(t for t in seq.track_ids if seq.area(t) > 0)

    def process_pair(self, seq: Sequence, table: TrackTable, pair: int,
                     config: RunConfig) -> Tuple[ResidualMatrix, List[InlierVector]]:
        kind = config.effective_model
        coords = normalize_coords(seq.width, seq.height)
        inverse_depth = seq.inverse_depth(pair)

        models, samples = {}, {}
        for track_id in table.visible_tracks(pair):
            sample = sample_pixels(
                track_id, pair, seq, config.max_samples,
                seed=derive_seed(config.seed, STAGE_SAMPLING, pair, track_id),
                coords=coords, inverse_depth=inverse_depth, quorum=config.quorum,
            )
            samples[track_id] = sample
            models[track_id] = fit_model(kind, sample, config.quorum)

        residuals = residual_matrix(models, samples, pair, table.track_ids)
        t = config.inliers or ork_threshold(len(models), config.ork_fraction)
        logger.debug(f"Pair {pair}: {len(models)} visible objects, t = {t}")
        return residuals, pair_inliers(residuals, t)

    def similarity(self, seq: Sequence, table: TrackTable,
                   config: RunConfig) -> Tuple[SimilarityMatrix, List[ResidualMatrix]]:
        pairs = range(seq.pair_count)
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                outcomes = list(pool.map(lambda m: self.process_pair(seq, table, m, config), pairs))
        else:
            outcomes = [self.process_pair(seq, table, m, config) for m in pairs]

        inliers = [vector for _, vectors in outcomes for vector in vectors]
        return accumulate_similarity(inliers, table), [residuals for residuals, _ in outcomes]

    def run(self, seq: Sequence, config: RunConfig) -> SegmentationResult:
        filtered = filter_sequence(seq, config.iou_threshold, config.max_area_fraction)
        tracks = self.surviving_tracks(filtered)
        min_pixels = max(config.min_pixels, config.quorum)
        if min_pixels != config.min_pixels:
            logger.info(f"Raising min_pixels to the fitting quorum ({min_pixels})")
        table = build_track_table(filtered, min_pixels, track_ids=tracks)
        logger.info(f"{len(tracks)} of {len(seq.track_ids)} tracks survive proposal filtering")

        if config.ablation == constants.ABLATION_PROPOSALS:
            labeling = Labeling(track_ids=tracks, labels=tuple(range(len(tracks))))
            logger.info(f"proposals-baseline: {len(tracks)} groups, one per proposal")
            return SegmentationResult(
                labeling=labeling, frames=render_segmentation(labeling, filtered),
                sequence=filtered, table=table,
            )

        similarity, residuals = self.similarity(filtered, table, config)
        labeling = spectral_cluster(
            similarity, config.num_motions, seed=derive_seed(config.seed, STAGE_KMEANS)
        )
        labeling = assign_background(labeling, filtered, config.background_track)
        logger.info(f"Clustered {len(tracks)} tracks into {labeling.num_groups} motion groups")
        return SegmentationResult(
            labeling=labeling,
            frames=render_segmentation(labeling, filtered, binary=config.binary),
            sequence=filtered, table=table, similarity=similarity, residuals=residuals,
        )

    def segment_manifest(self, config: RunConfig) -> SegmentationResult:
        if config.manifest is None:
            raise ValidationError("--manifest is required")
        result = self.run(load_sequence(config.manifest), config)
        if config.output_dir is not None:
            self.save(result, config)
        return result

    def save(self, result: SegmentationResult, config: RunConfig) -> Path:
        out_dir = Path(config.output_dir)
        write_segmentation(
            out_dir, result.frames, result.labeling, binary=config.binary,
            extra={'config': config.to_dict()},
        )
        if config.dump_affinity is not None:
            if result.similarity is None:
                logger.warning(f"No similarity matrix in {config.ablation} mode; not writing {config.dump_affinity}")
            else:
                write_affinity(config.dump_affinity, result.similarity)
        logger.info(f"Wrote {len(result.frames)} label masks to {out_dir}")
        return out_dir


# Create singleton instance
segmentation_service = SegmentationService()
