"""
Django management command to draw group overlays and flow images.
Run with: python manage.py visualize result/ vis/ --manifest sim/manifest.yaml
"""

from django.core.management.base import BaseCommand, CommandError

from motionseg.segmentation.cues import load_sequence
from motionseg.segmentation.evaluation import load_label_dir
from motionseg.segmentation.exceptions import MotionSegError
from motionseg.segmentation.visualization import write_flow_images, write_overlays


class Command(BaseCommand):
    help = 'Write color-coded group overlays and, with --manifest, color-wheel flow images'

    def add_arguments(self, parser):
        parser.add_argument('masks', help='Directory of label masks (segment or simulate output)')
        parser.add_argument('out', help='Output directory for images')
        parser.add_argument('--manifest', help='Sequence manifest whose flow is drawn')

    def handle(self, *args, **options):
        try:
            labels = load_label_dir(options['masks'])
            num_groups = max((int(frame.max()) for frame in labels.frames), default=0)
            overlays = write_overlays(labels.frames, options['out'], num_groups, labels.background_label)
            flows = []
            if options['manifest']:
                flows = write_flow_images(load_sequence(options['manifest']).flows, options['out'])
        except MotionSegError as e:
            raise CommandError(str(e))
        self.stdout.write(self.style.SUCCESS(
            f"✅ Wrote {len(overlays)} overlays and {len(flows)} flow images to {options['out']}"
        ))
