from django.apps import AppConfig


class SegnetConfig(AppConfig):
    name = 'segnet'
    verbose_name = 'KM-UNet model, checkpoints and verification'
