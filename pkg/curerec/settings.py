"""
Django settings for the curerec project - circuit-aware recommender unlearning
"""

from pathlib import Path
import os

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Only used by Django internals; nothing here is served.
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'curerec-desk-scale-not-a-secret')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Local apps
    'interactions',
    'nanorec',
    'attribution',
    'ppr',
    'circuits',
    'unlearn',
    'evaluation',
    'runs',
]


# Run registry; sqlite keeps the tool self-contained on one machine.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('CURE_DB_PATH', default=str(BASE_DIR / 'db.sqlite3')),
    }
}


# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True


# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Run artifacts and content-hash caches
CURE_RUNS_DIR = Path(config('CURE_RUNS_DIR', default=str(BASE_DIR / 'runs_out')))
CURE_CACHE_DIR = Path(config('CURE_CACHE_DIR', default=str(BASE_DIR / '.cure_cache')))

# Worker cap for torch intra-op parallelism; 1 is the fully deterministic mode.
CURE_THREADS = config('CURE_THREADS', default=1, cast=int)

# Optional default run config file picked up when --config is not given
CURE_DEFAULT_CONFIG = config('CURE_DEFAULT_CONFIG', default='')


# Logging Configuration
CURE_LOG_LEVEL = config('CURE_LOG_LEVEL', default='INFO')
CURE_LOG_FILE = config('CURE_LOG_FILE', default='')

_APP_LOGGERS = [
    'interactions',
    'nanorec',
    'attribution',
    'ppr',
    'circuits',
    'unlearn',
    'evaluation',
    'runs',
]

_handlers = ['console'] + (['file'] if CURE_LOG_FILE else [])

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        **(
            {
                'file': {
                    'class': 'logging.FileHandler',
                    'filename': CURE_LOG_FILE,
                    'formatter': 'verbose',
                }
            }
            if CURE_LOG_FILE
            else {}
        ),
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': _handlers,
            'level': os.getenv('DJANGO_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
        **{
            name: {
                'handlers': _handlers,
                'level': CURE_LOG_LEVEL,
                'propagate': False,
            }
            for name in _APP_LOGGERS
        },
    },
}
