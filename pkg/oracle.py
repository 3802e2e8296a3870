# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
"""Slow reference implementations and synthetic phantoms.

Nothing here is meant to be fast: the flood fills are plain breadth-first
searches so they can be trusted against the union-find sweep.
"""
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from trytond.i18n import gettext

from .calibration import LongitudinalManifest, SubjectEntry, TimepointEntry
from .exceptions import PhantomError, describe
from .filtration import PersistenceDiagram, grid_neighbors
from .volume_io import Volume, save_volume

logger = logging.getLogger(__name__)


def brute_force_components(vol, tau):
    "Components of {p >= tau} keyed by their minimum linear index"
    data = vol.data
    tau = vol.level(tau)
    alive = {i for i in range(vol.size) if data[i] >= tau}
    components = {}
    seen = set()
    for start in sorted(alive):
        if start in seen:
            continue
        seen.add(start)
        members = [start]
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in grid_neighbors(v, vol.dims):
                if w in alive and w not in seen:
                    seen.add(w)
                    members.append(w)
                    queue.append(w)
        components[start] = frozenset(members)
    return components


@dataclass
class LevelSweepTrace:
    levels: list = field(default_factory=list)
    components_at_level: list = field(default_factory=list)

    def is_nested(self):
        "Every component survives, possibly merged, at lower levels"
        for upper, lower in zip(self.components_at_level,
                self.components_at_level[1:]):
            for members in upper.values():
                if not any(members <= other for other in lower.values()):
                    return False
        return True


def level_sweep_trace(vol, mask_eps=0.0):
    mask_eps = vol.level(mask_eps)
    levels = sorted({float(p) for p in vol.data if p > mask_eps},
        reverse=True)
    return LevelSweepTrace(levels,
        [brute_force_components(vol, level) for level in levels])


def brute_force_diagram(vol, mask_eps=0.0):
    "Elder-rule diagram from flood fills at every distinct level"
    trace = level_sweep_trace(vol, mask_eps)
    alive = {}
    dots = []
    for level, components in zip(trace.levels, trace.components_at_level):
        for members in components.values():
            births = [v for v in alive if v in members]
            if not births:
                # a fresh region only holds voxels at this very level
                alive[min(members)] = level
            elif len(births) > 1:
                births.sort(key=lambda v: (-alive[v], v))
                for v in births[1:]:
                    dots.append((alive.pop(v), level, v))
    essentials = sorted(alive.items(), key=lambda item: (-item[1], item[0]))
    return PersistenceDiagram(
        np.array([b for b, _, _ in dots], dtype=vol.dtype),
        np.array([d for _, d, _ in dots], dtype=vol.dtype),
        np.array([v for _, _, v in dots], dtype=np.int64),
        np.array([b for _, b in essentials], dtype=vol.dtype),
        np.array([v for v, _ in essentials], dtype=np.int64))


def random_quantized_volume(rng, max_dim=8, levels=32, zero_fraction=0.3):
    "Random volume with values in multiples of 1/levels, ties included"
    dims = tuple(int(d) for d in rng.integers(1, max_dim + 1, size=3))
    values = rng.integers(0, levels + 1, size=dims) / levels
    values[rng.random(dims) < zero_fraction] = 0.0
    return Volume.from_array(values)


@dataclass(frozen=True)
class Lesion:
    center: tuple
    radius: float
    peak: float


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (32, 32, 32)
    n_lesions: int = 3
    lesion_radius_range: tuple = (2.0, 3.0)
    noise_speckles: int = 0
    noise_amplitude: float = 0.3
    seed: int = 0
    peak_range: tuple = (0.7, 1.0)
    # smooth haze centred on the first lesion, 0 disables it
    background_peak: float = 0.0
    background_sigma: float = None
    voxel_size_mm: tuple = (2.0, 2.0, 2.0)
    max_retries: int = 1000

    @property
    def sigma(self):
        if self.background_sigma is not None:
            return float(self.background_sigma)
        return min(self.dims) / 5

    @property
    def half_background_radius(self):
        "Distance from the haze centre where the haze falls to half"
        return self.sigma * math.sqrt(2 * math.log(2))


def _fits(spec, center, radius, placed):
    for lesion in placed:
        distance = math.dist(center, lesion.center)
        if distance < radius + lesion.radius + 3:
            return False
    if placed and spec.background_peak > 0:
        anchor = placed[0].center
        if (math.dist(center, anchor) - radius - 1
                < spec.half_background_radius):
            return False
    return True


def place_lesions(spec, rng, count):
    "Rejection-sample non-overlapping lesions"
    lesions = []
    low, high = spec.lesion_radius_range
    for _ in range(count):
        for _ in range(spec.max_retries):
            radius = float(rng.uniform(low, high))
            margin = int(math.ceil(radius))
            if any(d <= 2 * margin for d in spec.dims):
                continue
            center = tuple(int(rng.integers(margin, d - margin))
                for d in spec.dims)
            if _fits(spec, center, radius, lesions):
                lesions.append(Lesion(center, radius,
                        float(rng.uniform(*spec.peak_range))))
                break
        else:
            raise PhantomError(gettext('lesion_count.msg_phantom_placement',
                    lesions=count, retries=spec.max_retries),
                describe(lesions=count, retries=spec.max_retries))
    return lesions


def render_phantom(spec, lesions, rng):
    "Lesion bumps over the optional haze, then additive speckles"
    if spec.background_peak >= spec.peak_range[0]:
        raise ValueError('Background peak must stay below lesion peaks')
    grid = np.indices(spec.dims, dtype=np.float64)
    values = np.zeros(spec.dims)
    if lesions and spec.background_peak > 0:
        squared = sum((g - c) ** 2 for g, c in zip(grid, lesions[0].center))
        values = spec.background_peak * np.exp(
            -squared / (2 * spec.sigma ** 2))
    for lesion in lesions:
        distance = np.sqrt(sum((g - c) ** 2
                for g, c in zip(grid, lesion.center)))
        bump = np.where(distance < lesion.radius,
            lesion.peak * np.cos(np.pi / 2 * distance / lesion.radius) ** 2,
            0.0)
        values = np.maximum(values, bump)
    flat = values.ravel(order='F')
    if spec.noise_speckles:
        positions = rng.integers(0, flat.size, size=spec.noise_speckles)
        heights = rng.uniform(0, spec.noise_amplitude,
            size=spec.noise_speckles)
        for position, height in zip(positions, heights):
            flat[position] = min(1.0, flat[position] + height)
    return Volume(spec.dims, spec.voxel_size_mm, np.clip(flat, 0.0, 1.0))


def generate_phantom(spec):
    "Return (volume, true lesion count), deterministic from spec.seed"
    rng = np.random.default_rng(spec.seed)
    lesions = place_lesions(spec, rng, spec.n_lesions)
    return render_phantom(spec, lesions, rng), len(lesions)


@dataclass(frozen=True)
class LongitudinalSpec:
    n_subjects: int = 5
    timepoints: int = 4
    # one non-decreasing schedule shared by every subject, or None to draw
    # one per subject inside lesion_range
    lesion_schedule: tuple = None
    lesion_range: tuple = (5, 20)
    seed: int = 0
    phantom: PhantomSpec = PhantomSpec(n_lesions=0)


def lesion_schedule(spec, rng):
    if spec.lesion_schedule is not None:
        schedule = [int(k) for k in spec.lesion_schedule]
        if len(schedule) != spec.timepoints:
            raise ValueError('Schedule needs one count per timepoint')
        if any(b < a for a, b in zip(schedule, schedule[1:])):
            raise ValueError('Lesion schedule must be non-decreasing')
        return schedule
    low, high = spec.lesion_range
    return sorted(int(k)
        for k in rng.integers(low, high + 1, size=spec.timepoints))


def generate_longitudinal(spec, out_dir):
    "Write raw_json volumes and manifest.json under out_dir"
    if spec.timepoints < 2:
        raise ValueError('At least two timepoints are required')
    os.makedirs(out_dir, exist_ok=True)
    subjects = []
    for number, seed in enumerate(
            np.random.SeedSequence(spec.seed).spawn(spec.n_subjects), 1):
        rng = np.random.default_rng(seed)
        schedule = lesion_schedule(spec, rng)
        lesions = place_lesions(spec.phantom, rng, max(schedule, default=0))
        subject_id = 'subject-%02d' % number
        timepoints = []
        for t_index, count in enumerate(schedule, 1):
            vol = render_phantom(spec.phantom, lesions[:count], rng)
            path = os.path.join(out_dir, '%s_t%d.json' % (subject_id,
                    t_index))
            save_volume(vol, path)
            timepoints.append(TimepointEntry(t_index, path, count))
        subjects.append(SubjectEntry(subject_id, timepoints))
    manifest = LongitudinalManifest(subjects)
    manifest.write(os.path.join(out_dir, 'manifest.json'))
    logger.info('Generated %d subjects x %d timepoints in %s',
        spec.n_subjects, spec.timepoints, out_dir)
    return manifest
