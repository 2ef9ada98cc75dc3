from django.apps import AppConfig


class SsmConfig(AppConfig):
    name = 'ssm'
    verbose_name = 'Directional scans, selective state space and SEM attention'
