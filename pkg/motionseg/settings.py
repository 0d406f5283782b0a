"""
Django settings for the motionseg project.

The project has no web surface; Django provides settings, logging
configuration, management commands and the test runner.
"""

import logging
import os
import sys
from pathlib import Path

import yaml

from motionseg.segmentation import constants

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

_is_testing = os.environ.get('MOTIONSEG_TESTING') == '1'

# Tunables; the first config file found overrides them
MOTIONSEG = {
    'MOTION_MODEL': constants.MODEL_LINEAR_DEPTH,
    'ORK_FRACTION': constants.ORK_FRACTION,
    'IOU_THRESHOLD': constants.IOU_THRESHOLD,
    'MAX_AREA_FRACTION': constants.MAX_AREA_FRACTION,
    'MIN_PIXELS': constants.MIN_PIXELS,
    'MAX_SAMPLES': constants.MAX_SAMPLES,
    'FIT_QUORUM': constants.FIT_QUORUM,
    'SEED': constants.DEFAULT_SEED,
    'THREADS': constants.THREADS,
}

CONFIG_FILES = [
    Path.cwd() / "motionseg.yaml",
    Path.cwd() / ".motionseg.yaml",
    Path.home() / ".motionseg.yaml",
    Path.home() / ".config" / "motionseg" / "config.yaml",
]

MOTIONSEG_CONFIG_FILE = None
if not _is_testing:
    for config_file in CONFIG_FILES:
        if not config_file.exists():
            continue
        try:
            with open(config_file) as f:
                overrides = yaml.safe_load(f) or {}
            if not isinstance(overrides, dict):
                raise ValueError("expected a mapping")
            MOTIONSEG.update({str(key).upper(): value for key, value in overrides.items()})
            MOTIONSEG_CONFIG_FILE = config_file
        except (OSError, ValueError, yaml.YAMLError) as e:
            logging.getLogger(__name__).warning(
                f"Could not load motionseg configuration from {config_file}: {e}; using defaults"
            )
        break

if os.environ.get('MOTIONSEG_THREADS'):
    try:
        MOTIONSEG['THREADS'] = max(1, int(os.environ['MOTIONSEG_THREADS']))
    except ValueError:
        logging.getLogger(__name__).warning(
            f"Ignoring MOTIONSEG_THREADS={os.environ['MOTIONSEG_THREADS']!r}: not an integer"
        )

# SECURITY WARNING: nothing here is served, but Django still wants a key.
SECRET_KEY = os.environ.get('MOTIONSEG_SECRET_KEY', 'django-insecure-motionseg-local-only')

DEBUG = False

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'motionseg.segmentation',
]

# No models, no database.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

# Logging configuration
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
            'stream': sys.stdout,
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING' if _is_testing else 'INFO',
    },
    'loggers': {
        'motionseg': {
            'handlers': ['console'],
            'level': 'WARNING' if _is_testing else 'INFO',
            'propagate': False,
        },
        'PIL': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}
