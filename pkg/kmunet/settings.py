from pathlib import Path
from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Django still wants a secret key even though nothing here is served.
SECRET_KEY = config('SECRET_KEY', default='kmunet-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'numerics',
    'ssm',
    'kan',
    'segnet',
    'training',
    'segdata',
]

# No ORM models: nothing is persisted in a database.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# --------------------------
# KM-UNet
# --------------------------
# Global seed fallback for every command that is not given one.
KM_SEED = config('KM_SEED', default=0, cast=int)

# Non-finite check after every recorded tensor op.
KM_DEBUG = config('KM_DEBUG', default=False, cast=bool)

KM_LOG_LEVEL = config('KM_LOG_LEVEL', default='INFO')

KM_DEFAULT_DIRECTIONS = config(
    'KM_DEFAULT_DIRECTIONS', default='tl_br,tr_bl,br_tl,bl_tr', cast=Csv()
)

# Output threshold on probabilities for eval/infer.
KM_THRESHOLD = config('KM_THRESHOLD', default=0.5, cast=float)


# --------------------------
# Logging
# --------------------------
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)-7s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        app: {'handlers': ['console'], 'level': KM_LOG_LEVEL, 'propagate': False}
        for app in ('numerics', 'ssm', 'kan', 'segnet', 'training', 'segdata', 'kmunet')
    },
}
