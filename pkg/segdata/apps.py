from django.apps import AppConfig


class SegdataConfig(AppConfig):
    name = 'segdata'
    verbose_name = 'Segmentation samples: synthesis, augmentation and PNM files'
