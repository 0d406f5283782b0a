from django.apps import AppConfig


class SegmentationConfig(AppConfig):
    name = 'motionseg.segmentation'
    verbose_name = 'Motion segmentation'
