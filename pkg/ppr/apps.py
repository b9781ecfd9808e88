from django.apps import AppConfig


class PprConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ppr'
