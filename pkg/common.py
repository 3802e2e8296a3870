# This file is part of Tryton.  The COPYRIGHT file at the top level of
# this repository contains the full copyright notices and license terms.
import json

import trytond.config as config
from trytond.i18n import gettext

from .exceptions import ManifestError

SECTION = 'lesion_count'


def get_mask_eps():
    return config.getfloat(SECTION, 'mask_eps', default=0.0)


def get_crop_eps():
    return config.getfloat(SECTION, 'crop_eps', default=0.0)


def get_theta():
    return config.getfloat(SECTION, 'theta', default=0.02)


def get_tau():
    return config.getfloat(SECTION, 'tau', default=0.5)


def get_folds():
    return config.getint(SECTION, 'folds', default=5)


def get_seed():
    return config.getint(SECTION, 'seed', default=0)


def get_jobs():
    return config.getint(SECTION, 'jobs', default=1)


def get_max_retries():
    return config.getint(SECTION, 'max_retries', default=1000)


def load_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (TypeError, ValueError):
        raise ManifestError(gettext('lesion_count.msg_invalid_json'),
            str(path))


def dump_json(data, path=None):
    "Serialize with a stable layout so reruns are byte-identical"
    text = json.dumps(data, indent=2, sort_keys=True) + '\n'
    if path is not None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    return text
