"""
Django settings for the evalguard project.

evalguard has no web surface: Django provides the settings layer, the
management-command CLI and the test runner. Everything configurable is read
from the environment (optionally through a .env file).

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

import os
from dotenv import load_dotenv
from pathlib import Path

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', '!@#secretkey@#!')

DEBUG = os.environ.get('DEBUG', 'False') == 'True'


# Application definition

INSTALLED_APPS = [
    'outliers',
]

# Fits, curves and reports are files; nothing is persisted in a database.
DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'


# Logging

EVALGUARD_LOG_LEVEL = os.environ.get('EVALGUARD_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'outliers': {
            'handlers': ['console'],
            'level': EVALGUARD_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Outlier detection

EVALGUARD_OUTPUT_DIR = os.environ.get('EVALGUARD_OUTPUT_DIR', BASE_DIR / 'output')

# Caps the number of simulation replicates fitted concurrently.
EVALGUARD_THREADS = max(1, int(os.environ.get('EVALGUARD_THREADS', 1)))

# Alternative magnitude |L'beta| = c, in outcome units (dB HL for hearing data).
EVALGUARD_DEFAULT_C = float(os.environ.get('EVALGUARD_DEFAULT_C', 5.0))

EVALGUARD_DEFAULT_DELTA = float(os.environ.get('EVALGUARD_DEFAULT_DELTA', 0.1))

# "start:stop:step", stop inclusive
EVALGUARD_DEFAULT_GRID = os.environ.get('EVALGUARD_DEFAULT_GRID', '0.10:0.95:0.01')

EVALGUARD_BH_ALPHA = float(os.environ.get('EVALGUARD_BH_ALPHA', 0.1))
