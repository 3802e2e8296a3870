# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
from trytond.exceptions import UserError


class LesionCountError(UserError):
    pass


class VolumeError(LesionCountError):
    pass


class ManifestError(LesionCountError):
    pass


class CalibrationError(LesionCountError):
    pass


class PhantomError(LesionCountError):
    pass


def describe(subject=None, **values):
    "Error description carrying the values the message is built from"
    details = ', '.join(
        '%s=%s' % (key, values[key]) for key in sorted(values))
    if subject is None:
        return details
    if not details:
        return str(subject)
    return '%s (%s)' % (subject, details)
