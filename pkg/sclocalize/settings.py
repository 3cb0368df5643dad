"""
Django settings for the sclocalize project.

The project has no database and no web surface; Django provides the settings
layer, app registry and management commands (the command-line interface).

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os
import sys
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("SECRET_KEY", "sclocalize-local-only")

DEBUG = os.getenv("DEBUG", "False") == "True"

ALLOWED_HOSTS = []

# Pipeline defaults - centralized so every key can be overridden from a
# --config file or from the environment (SCWLS_LOSS_TAU=2 -> loss.tau).
SCWLS = {
    # losses
    'loss.tau': 1.0,                    # inlier threshold in pixels
    'loss.alpha': 5.0,
    'loss.beta': 1e-4,                  # indoor; outdoor scenes use 1e-6
    'loss.gamma': 5.0,
    'loss.depth_heuristic': 10.0,       # meters along the observed ray
    'loss.depth_min': 0.1,
    'loss.depth_max': 1000.0,
    'loss.max_reprojection_px': 1000.0,
    'loss.bce_eps': 1e-7,
    # lm-refine
    'refine.threshold_px': 10.0,
    'refine.max_iters': 100,
    'refine.max_inner_iters': 50,
    'refine.lambda_init': 1e-3,
    'refine.lambda_up': 10.0,
    'refine.lambda_down': 10.0,
    # weight-fit
    'fit.learning_rate': 1e-2,
    'fit.e2e_learning_rate': 1e-3,
    'fit.theta_init': 1.5,
    'fit.divergence_factor': 1e6,
    'fit.iterations': 5000,
    'fit.e2e_iterations': 500,
    'fit.schedule': 'joint',
    'fit.coord_gradient': 'residual',
    # adapt
    'adapt.frame_interval': 1,
    'adapt.iterations': 100,
    'adapt.learning_rate': 0.2,
    'adapt.fd_step': 1e-5,
    # simulator
    'simulator.n_points': 100,
    'simulator.pixel_noise_sigma': 0.0,
    'simulator.coord_noise_sigma': 0.0,
    'simulator.outlier_fraction': 0.0,
    'simulator.outlier_min_error_px': 20.0,
    'simulator.fx': 525.0,
    'simulator.fy': 525.0,
    'simulator.cx': 320.0,
    'simulator.cy': 240.0,
    'simulator.width': 640,
    'simulator.height': 480,
    'simulator.camera_distance': 4.0,
    # eval
    'eval.t_thresh_m': 0.05,
    'eval.r_thresh_deg': 5.0,
    'eval.confidence_threshold': 0.9,
    # ransac baseline
    'ransac.iterations': 256,
    'ransac.threshold_px': 10.0,
}

for _key in list(SCWLS):
    _env_value = os.getenv('SCWLS_' + _key.replace('.', '_').upper())
    if _env_value is not None:
        SCWLS[_key] = type(SCWLS[_key])(_env_value)

LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
            'stream': 'ext://sys.stderr',
        },
    },
    'loggers': {
        '': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "django.contrib.auth",
    "rest_framework",
    "simulator",
    "geometry",
    "losses",
    "training",
    "refinement",
    "adaptation",
    "evaluation",
]

DATABASES = {}

# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# TESTS
if 'test' in sys.argv or 'pytest' in sys.modules:
    # Keep test output quiet
    LOGGING = {
        'version': 1,
        'disable_existing_loggers': False,
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
            },
        },
        'root': {
            'handlers': ['console'],
            'level': 'CRITICAL',
        },
    }
