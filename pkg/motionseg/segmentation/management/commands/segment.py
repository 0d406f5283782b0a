"""
Django management command to segment a sequence into motion groups.
Run with: python manage.py segment --manifest clip/manifest.yaml --num-motions 2 --out result/
"""

import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from motionseg.segmentation import constants
from motionseg.segmentation.exceptions import MotionSegError
from motionseg.segmentation.pipeline import RunConfig, segmentation_service

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Cluster the tracked objects of a sequence into motion groups and write label masks'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True, help='Sequence manifest (YAML)')
        parser.add_argument('--out', required=True, help='Output directory for label masks')
        parser.add_argument(
            '--num-motions', type=int,
            help='Number of motion groups K (required unless --ablation proposals-baseline)',
        )
        parser.add_argument('--motion-model', choices=constants.MOTION_MODELS, help='Per-object motion model')
        parser.add_argument(
            '--ablation', choices=constants.ABLATION_MODES, default=constants.ABLATION_FULL,
            help='full, flow-only (quadratic model) or proposals-baseline (no clustering)',
        )
        parser.add_argument('--ork-fraction', type=float, help='Inlier fraction of visible objects (default: 0.25)')
        parser.add_argument('--inliers', type=int, help='Fixed inlier count t for every frame pair')
        parser.add_argument('--iou-threshold', type=float, help='Proposal suppression IoU (default: 0.5)')
        parser.add_argument('--max-area-fraction', type=float, help='Largest allowed proposal area (default: 0.5)')
        parser.add_argument('--min-pixels', type=int, help='Pixels per frame for a track to be visible (default: 50)')
        parser.add_argument('--max-samples', type=int, help='Pixels sampled per object per pair (default: 5000)')
        parser.add_argument('--seed', type=int, help='Root random seed (default: 0)')
        parser.add_argument('--threads', type=int, help='Worker threads for per-pair fitting')
        parser.add_argument('--binary', action='store_true', help='Write moving/static masks only')
        parser.add_argument('--background-track', type=int, help='Force the group of this track to be background')
        parser.add_argument('--dump-affinity', metavar='PATH', help='Also write the similarity matrix as text to PATH')

    def handle(self, *args, **options):
        num_motions = options['num_motions']
        if num_motions is None:
            if options['ablation'] != constants.ABLATION_PROPOSALS:
                raise CommandError("--num-motions is required")
            num_motions = 1

        config_file = getattr(settings, 'MOTIONSEG_CONFIG_FILE', None)
        if config_file:
            self.stdout.write(f"⚙️  Using configuration from {config_file}")

        try:
            config = RunConfig.from_settings(
                num_motions=num_motions,
                manifest=options['manifest'],
                output_dir=options['out'],
                motion_model=options['motion_model'],
                ablation=options['ablation'],
                ork_fraction=options['ork_fraction'],
                inliers=options['inliers'],
                seed=options['seed'],
                iou_threshold=options['iou_threshold'],
                max_area_fraction=options['max_area_fraction'],
                min_pixels=options['min_pixels'],
                max_samples=options['max_samples'],
                threads=options['threads'],
                binary=options['binary'],
                background_track=options['background_track'],
                dump_affinity=options['dump_affinity'],
            )
            self.stdout.write(f"🚀 Segmenting {config.manifest} ({config.ablation}, {config.effective_model})")
            result = segmentation_service.segment_manifest(config)
        except MotionSegError as e:
            logger.error(f"Segmentation of {options['manifest']} failed: {e}")
            raise CommandError(str(e))

        groups = result.labeling.groups
        for group, tracks in groups.items():
            marker = ' (background)' if group == result.labeling.background_group else ''
            self.stdout.write(f"🔹 group {group}{marker}: tracks {tracks}")
        self.stdout.write(self.style.SUCCESS(
            f"✅ Wrote {len(result.frames)} label masks with {len(groups)} groups to {config.output_dir}"
        ))
