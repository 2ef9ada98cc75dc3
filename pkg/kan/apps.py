from django.apps import AppConfig


class KanConfig(AppConfig):
    name = 'kan'
    verbose_name = 'Kolmogorov-Arnold layers and tokenized blocks'
