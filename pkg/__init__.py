# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
from trytond.pool import Pool
from . import lesion

__all__ = ['register']


def register():
    Pool.register(
        lesion.Configuration,
        lesion.Subject,
        lesion.Timepoint,
        lesion.Calibration,
        module='lesion_count', type_='model')
