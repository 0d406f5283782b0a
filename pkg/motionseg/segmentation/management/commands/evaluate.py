"""
Django management command to score a segmentation against ground truth.
Run with: python manage.py evaluate --pred result/ --gt sim/groundtruth --report report.yaml
"""

from django.core.management.base import BaseCommand, CommandError

from motionseg.segmentation.evaluation import evaluate_dirs, write_report
from motionseg.segmentation.exceptions import MotionSegError


class Command(BaseCommand):
    help = 'Compute Pu/Ru/Fu and ARI of predicted label masks against ground truth'

    def add_arguments(self, parser):
        parser.add_argument('--pred', required=True, help='Directory of predicted label masks')
        parser.add_argument('--gt', required=True, help='Directory of ground-truth label masks')
        parser.add_argument('--report', help='Report path (YAML); a per-frame CSV is written next to it')

    def handle(self, *args, **options):
        try:
            report = evaluate_dirs(options['pred'], options['gt'])
            if options['report']:
                yaml_path, csv_path = write_report(options['report'], report)
        except MotionSegError as e:
            raise CommandError(str(e))

        ari = 'n/a' if report.ari is None else f"{report.ari:.4f}"
        self.stdout.write(f"📊 Pu {report.pu:.4f}  Ru {report.ru:.4f}  Fu {report.fu:.4f}  ARI {ari}")
        if options['report']:
            self.stdout.write(self.style.SUCCESS(f"✅ Wrote {yaml_path} and {csv_path}"))
