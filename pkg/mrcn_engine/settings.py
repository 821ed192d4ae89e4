"""
Django settings for the mrcn_engine project.

The engine has no web surface: everything runs through management commands
(``python manage.py synth|train|sweep|predict|evaluate|gradcheck``). Django
supplies configuration, logging, the run registry and the test runner.
"""

import os
from pathlib import Path

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()
READ_DOT_ENV_FILE = env.bool('MRCN_READ_DOT_ENV_FILE', default=True)

if READ_DOT_ENV_FILE:
    # OS environment variables take precedence over variables from .env
    if env.str('MRCN_ENV_PATH', default=None):
        env.read_env(str(Path(env.str('MRCN_ENV_PATH')) / '.env'))
    env.read_env(str(BASE_DIR / '.env'))


SECRET_KEY = env('SECRET_KEY', default='mrcn-engine-local-only-key')

DEBUG = env.bool('DEBUG', default=False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Third-party apps
    'rest_framework',

    'networks',
    'scenes',
    'training',
    'evaluation',
]

MIDDLEWARE = []


# Database (run registry)

DATABASES = {
    'default': env.db(
        'DATABASE_URL',
        default=f'sqlite:///{BASE_DIR / "mrcn_registry.sqlite3"}',
    ),
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# ==============================================================================
# ENGINE
# ==============================================================================

# Overrides the config file's `threads` key when set.
MRCN_THREADS = env.int('MRCN_THREADS', default=None)

# BLAS pools are sized when numpy loads, which happens after settings.
if MRCN_THREADS:
    for _var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
        os.environ.setdefault(_var, str(MRCN_THREADS))

# NaN/Inf check after every graph node.
MRCN_CHECK_FINITE = env.bool('MRCN_CHECK_FINITE', default=DEBUG)

# Gates the empirical training tests.
MRCN_SLOW_TESTS = env.bool('MRCN_SLOW_TESTS', default=False)


# ==============================================================================
# LOGGING
# ==============================================================================

LOGS_DIR = Path(env.str('MRCN_LOG_DIR', default=str(BASE_DIR / 'logs')))
LOG_LEVEL = env.str('MRCN_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {asctime} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'INFO',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOGS_DIR / 'mrcn.log',
            'maxBytes': 1024 * 1024 * 10,  # 10 MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
        'training_file': {
            'level': 'INFO',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOGS_DIR / 'training.log',
            'maxBytes': 1024 * 1024 * 10,  # 10 MB
            'backupCount': 10,
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'WARNING',
            'propagate': False,
        },
        'training': {
            'handlers': ['console', 'training_file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'networks': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'scenes': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'evaluation': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'utils': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
}

# Create logs directory if it doesn't exist
LOGS_DIR.mkdir(parents=True, exist_ok=True)
