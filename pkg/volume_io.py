# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
"""Loading, validation and preprocessing of 3D lesion probability maps.

Voxels are linearized with x fastest: ``index = x + nx * (y + ny * z)``.
The same convention is used by the filtration graph, the oracles and every
file written by the command line.

Values keep the precision they were stored with (float32 or float64) and
every threshold is cast to that precision before it is compared, so a
level written as 0.9 in a float32 file still reaches the voxel stored as
0.9.
"""
import json
import logging
import os
import zlib
from dataclasses import dataclass

import nibabel as nib
import numpy as np
from nibabel.filebasedimages import ImageFileError
from nibabel.spatialimages import HeaderDataError
from trytond.i18n import gettext

from .common import dump_json
from .exceptions import VolumeError, describe

logger = logging.getLogger(__name__)

# On-disk NIfTI-1 types accepted, byte order aside
NIFTI1_DTYPES = ('u1', 'i2', 'i4', 'f4', 'f8')

RAW_DTYPES = {
    'float32': 'f4',
    'float64': 'f8',
    'int32': 'i4',
    }
RAW_BYTE_ORDERS = {
    'little': '<',
    'big': '>',
    }

# Values beyond this margin are not probabilities but raw intensities
PROBABILITY_TOLERANCE = 0.01


@dataclass(frozen=True)
class VolumeHeaderInfo:
    source_format: str
    original_dims: tuple
    scale_applied: tuple = None

    def __post_init__(self):
        if self.source_format not in ('nifti1', 'raw_json'):
            raise ValueError('Unknown source format %r' % self.source_format)
        if self.scale_applied is not None and self.scale_applied[0] == 0:
            raise ValueError('Scaling slope must not be zero')


def _storage_dtype(dtype):
    "float32 stays float32, anything else is widened to float64"
    dtype = np.dtype(dtype)
    if dtype.kind == 'f' and dtype.itemsize == 4:
        return np.dtype(np.float32)
    return np.dtype(np.float64)


@dataclass(frozen=True, eq=False)
class Volume:
    "A 3D field of lesion probabilities stored x fastest"
    dims: tuple
    voxel_size_mm: tuple
    data: np.ndarray
    header: VolumeHeaderInfo = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        voxel_size_mm = tuple(float(s) for s in self.voxel_size_mm)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError('Volume dims must be 3 positive integers, '
                'got %r' % (self.dims,))
        if len(voxel_size_mm) != 3 or min(voxel_size_mm) <= 0:
            raise ValueError('Voxel size must be 3 positive reals, '
                'got %r' % (self.voxel_size_mm,))
        data = np.asarray(self.data)
        data = np.array(data, dtype=_storage_dtype(data.dtype)).ravel()
        if data.size != dims[0] * dims[1] * dims[2]:
            raise ValueError('Volume dims %r do not match %d values'
                % (dims, data.size))
        if not np.all(np.isfinite(data)):
            raise ValueError('Volume values must be finite')
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError('Volume values must lie in [0, 1]')
        data.flags.writeable = False
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'voxel_size_mm', voxel_size_mm)
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_array(cls, array, voxel_size_mm=(1.0, 1.0, 1.0), header=None):
        "Build a volume from an array indexed [x, y, z]"
        array = np.asarray(array)
        array = array.astype(_storage_dtype(array.dtype), copy=False)
        if array.ndim == 1:
            array = array.reshape(-1, 1, 1)
        elif array.ndim == 2:
            array = array[:, :, np.newaxis]
        return cls(array.shape, voxel_size_mm, array.ravel(order='F'),
            header=header)

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def array(self):
        "Read-only view indexed [x, y, z]"
        return self.data.reshape(self.dims, order='F')

    def level(self, value):
        "A threshold in the precision the values are stored with"
        return self.data.dtype.type(value)

    def linear_index(self, x, y, z):
        nx, ny, _ = self.dims
        return x + nx * (y + ny * z)

    def coordinates(self, index):
        nx, ny, _ = self.dims
        return index % nx, (index // nx) % ny, index // (nx * ny)


def _to_probabilities(values, path):
    "Reject non-probability inputs and clamp float noise into [0, 1]"
    if values.dtype.kind != 'f':
        values = values.astype(np.float64)
    else:
        values = values.astype(values.dtype.newbyteorder('='), copy=False)
    if not np.all(np.isfinite(values)):
        raise VolumeError(gettext('lesion_count.msg_volume_not_finite'),
            describe(path, non_finite=int(np.count_nonzero(
                        ~np.isfinite(values)))))
    if not values.size:
        return values
    low, high = float(values.min()), float(values.max())
    if low < -PROBABILITY_TOLERANCE or high > 1 + PROBABILITY_TOLERANCE:
        raise VolumeError(gettext('lesion_count.msg_volume_not_probability',
                minimum=low, maximum=high),
            describe(path, minimum=low, maximum=high))
    if low < 0 or high > 1:
        logger.warning('Clamping %s values from [%s, %s] into [0, 1]',
            path, low, high)
        values = np.clip(values, 0, 1).astype(values.dtype, copy=False)
    return values


def load_nifti(path):
    "Single-volume NIfTI-1 file (.nii, .nii.gz or a .hdr/.img pair)"
    path = os.fspath(path)
    try:
        img = nib.load(path, mmap=False)
    except (ImageFileError, HeaderDataError, ValueError, EOFError,
            zlib.error) as exception:
        raise VolumeError(gettext('lesion_count.msg_nifti_bad_header'),
            describe(path, reason=exception))
    if not isinstance(img, nib.Nifti1Pair):
        raise VolumeError(gettext('lesion_count.msg_nifti_bad_header'),
            describe(path, format=type(img).__name__))

    header = img.header
    shape = tuple(int(d) for d in img.shape)
    if any(d > 1 for d in shape[3:]):
        raise VolumeError(gettext('lesion_count.msg_nifti_4d',
                frames=shape[3]), describe(path, frames=shape[3]))
    dims = shape[:3] + (1,) * (3 - len(shape[:3]))
    if not shape or min(dims) < 1:
        raise VolumeError(gettext('lesion_count.msg_nifti_bad_header'),
            describe(path, dim=shape))

    if header.get_data_dtype().str[1:] not in NIFTI1_DTYPES:
        datatype = int(header['datatype'])
        raise VolumeError(gettext('lesion_count.msg_nifti_datatype',
                datatype=datatype), describe(path, datatype=datatype))
    try:
        values = np.asanyarray(img.dataobj)
    except (OSError, ValueError, EOFError, zlib.error) as exception:
        raise VolumeError(gettext('lesion_count.msg_volume_truncated'),
            describe(path, reason=exception))

    scale = None
    slope, intercept = float(img.dataobj.slope), float(img.dataobj.inter)
    if slope != 1 or intercept != 0:
        scale = (slope, intercept)
    values = _to_probabilities(values.reshape(dims), path)

    zooms = tuple(header.get_zooms()[:3])
    zooms += (1.0,) * (3 - len(zooms))
    voxel_size_mm = tuple(abs(float(z)) or 1.0 for z in zooms)
    logger.debug('Loaded NIfTI %s: dims %s, voxel size %s, %s', path, dims,
        voxel_size_mm, values.dtype)
    return Volume(dims, voxel_size_mm, values.ravel(order='F'),
        header=VolumeHeaderInfo('nifti1', shape, scale))


def load_raw_json(path):
    path = os.fspath(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            header = json.load(f)
        dims = tuple(int(d) for d in header['dims'])
        voxel_size_mm = tuple(
            float(s) for s in header.get('voxel_size_mm', (1, 1, 1)))
        data_file = header['data_file']
    except (KeyError, TypeError, ValueError):
        raise VolumeError(gettext('lesion_count.msg_raw_bad_header'), path)
    if len(dims) != 3 or len(voxel_size_mm) != 3:
        raise VolumeError(gettext('lesion_count.msg_raw_bad_header'),
            describe(path, dims=dims))

    dtype_name = header.get('dtype', 'float32')
    if dtype_name not in RAW_DTYPES:
        raise VolumeError(gettext('lesion_count.msg_raw_dtype',
                dtype=dtype_name), describe(path, dtype=dtype_name))
    byte_order = header.get('byte_order', 'little')
    if byte_order not in RAW_BYTE_ORDERS:
        raise VolumeError(gettext('lesion_count.msg_raw_byte_order',
                byte_order=byte_order), describe(path, byte_order=byte_order))
    dtype = np.dtype(RAW_BYTE_ORDERS[byte_order] + RAW_DTYPES[dtype_name])

    data_path = os.path.join(os.path.dirname(path), data_file)
    with open(data_path, 'rb') as f:
        raw = f.read()
    count = dims[0] * dims[1] * dims[2]
    if len(raw) != count * dtype.itemsize:
        found = len(raw) // dtype.itemsize
        raise VolumeError(gettext('lesion_count.msg_raw_length',
                expected=count, found=found),
            describe(path, expected=count, found=found))
    values = _to_probabilities(np.frombuffer(raw, dtype=dtype), path)
    logger.debug('Loaded raw volume %s: dims %s, %s', path, dims,
        values.dtype)
    return Volume(dims, voxel_size_mm, values,
        header=VolumeHeaderInfo('raw_json', dims))


def write_raw_json(path, dims, voxel_size_mm, values, dtype='float32'):
    "Write a sidecar JSON header and its raw little-endian blob"
    path = os.fspath(path)
    if dtype not in RAW_DTYPES:
        raise ValueError('Unknown raw dtype %r' % dtype)
    data_file = os.path.splitext(os.path.basename(path))[0] + '.raw'
    values = np.asarray(values).ravel()
    with open(os.path.join(os.path.dirname(path), data_file), 'wb') as f:
        f.write(values.astype('<' + RAW_DTYPES[dtype]).tobytes())
    dump_json({
            'dims': [int(d) for d in dims],
            'voxel_size_mm': [float(s) for s in voxel_size_mm],
            'data_file': data_file,
            'dtype': dtype,
            'byte_order': 'little',
            }, path)
    logger.debug('Wrote raw volume %s', path)
    return path


def save_volume(vol, path, dtype='float32'):
    return write_raw_json(path, vol.dims, vol.voxel_size_mm, vol.data,
        dtype=dtype)


def load_volume(path):
    "Load by extension: .json is raw_json, anything else NIfTI-1"
    if os.fspath(path).endswith('.json'):
        return load_raw_json(path)
    return load_nifti(path)


def crop_to_foreground(vol, eps=0.0):
    "Bounding box of p > eps plus a one voxel margin"
    if not 0 <= eps < 1:
        raise ValueError('Crop eps must lie in [0, 1), got %r' % eps)
    array = vol.array
    coords = np.nonzero(array > vol.level(eps))
    if not coords[0].size:
        return Volume((1, 1, 1), vol.voxel_size_mm,
            np.zeros(1, dtype=vol.dtype), header=vol.header)
    box = tuple(
        slice(max(int(c.min()) - 1, 0), min(int(c.max()) + 2, n))
        for c, n in zip(coords, vol.dims))
    logger.debug('Cropped %s to %s', vol.dims, box)
    return Volume.from_array(array[box], vol.voxel_size_mm,
        header=vol.header)


def downsample(vol, factor):
    "Mean pooling over factor**3 blocks, partial blocks included"
    factor = int(factor)
    if factor < 1:
        raise ValueError('Downsample factor must be >= 1, got %r' % factor)
    if factor == 1:
        return vol
    array = vol.array
    sums = array.astype(np.float64)
    counts = np.ones_like(sums)
    for axis in range(3):
        starts = np.arange(0, array.shape[axis], factor)
        sums = np.add.reduceat(sums, starts, axis=axis)
        counts = np.add.reduceat(counts, starts, axis=axis)
    means = np.clip(sums / counts, array.min(), array.max())
    return Volume.from_array(means.astype(vol.dtype),
        tuple(s * factor for s in vol.voxel_size_mm), header=vol.header)


def preprocess(vol, crop=False, crop_eps=0.0, factor=1):
    "Crop first (cheaper), then downsample"
    if crop:
        vol = crop_to_foreground(vol, crop_eps)
    return downsample(vol, factor)
