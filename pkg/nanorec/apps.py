from django.apps import AppConfig


class NanorecConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'nanorec'
