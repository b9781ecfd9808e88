from django.apps import AppConfig


class UnlearnConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'unlearn'
