from django.apps import AppConfig


class LossesConfig(AppConfig):
    name = "losses"
    verbose_name = "Training losses"
