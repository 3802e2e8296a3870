# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
"""Superlevel 0-dimensional persistence of probability volumes.

Vertices are foreground voxels (p > mask_eps) under face (6) connectivity.
They enter the filtration by decreasing probability, ties by increasing
linear index. The root of every component is its earliest vertex in that
order, so the younger of two components is always the one whose root comes
later. Births, deaths and persistences are in probability units and in the
precision of the volume, and theta is cast to that precision before it is
compared.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

DIAGRAM_CSV_HEADER = ['birth', 'death', 'persistence', 'birth_index',
    'essential']


def grid_neighbors(index, dims):
    "Face neighbours of a linear index inside the grid"
    nx, ny, nz = dims
    x = index % nx
    y = (index // nx) % ny
    z = index // (nx * ny)
    if x > 0:
        yield index - 1
    if x < nx - 1:
        yield index + 1
    if y > 0:
        yield index - nx
    if y < ny - 1:
        yield index + nx
    if z > 0:
        yield index - nx * ny
    if z < nz - 1:
        yield index + nx * ny


@dataclass(frozen=True, eq=False)
class ForegroundGraph:
    dims: tuple
    vertex_ids: np.ndarray
    vertex_values: np.ndarray
    mask_eps: float = 0.0

    def __len__(self):
        return self.vertex_ids.size

    def rank(self):
        "Position in the filtration of every voxel, -1 for background"
        nx, ny, nz = self.dims
        rank = np.full(nx * ny * nz, -1, dtype=np.int64)
        rank[self.vertex_ids] = np.arange(self.vertex_ids.size)
        return rank

    def neighbors(self, index):
        "Foreground face neighbours of a foreground vertex"
        rank = self.rank()
        return [w for w in grid_neighbors(index, self.dims) if rank[w] >= 0]


@dataclass(frozen=True, eq=False)
class MergeForest:
    "Union-find over filtration ranks; a root is its component's birth"
    parent: np.ndarray
    vertex_ids: np.ndarray
    vertex_values: np.ndarray

    def find(self, rank):
        while self.parent[rank] != rank:
            rank = self.parent[rank]
        return rank

    def roots(self):
        return np.flatnonzero(self.parent == np.arange(self.parent.size))

    def root_birth(self, root):
        return float(self.vertex_values[root])

    def root_vertex(self, root):
        return int(self.vertex_ids[root])


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    dot_births: np.ndarray
    dot_deaths: np.ndarray
    dot_vertices: np.ndarray
    essential_births: np.ndarray
    essential_vertices: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0), np.empty(0, dtype=np.int64),
            np.empty(0), np.empty(0, dtype=np.int64))

    @property
    def dots(self):
        return [(float(b), float(d), int(v)) for b, d, v in zip(
                self.dot_births, self.dot_deaths, self.dot_vertices)]

    @property
    def essentials(self):
        return [(float(b), int(v)) for b, v in zip(
                self.essential_births, self.essential_vertices)]

    @property
    def persistence(self):
        return self.dot_births - self.dot_deaths

    @property
    def zero_persistence(self):
        "Plateau artifacts: dots born and killed at the same level"
        return self.persistence == 0

    def positive_dots(self):
        keep = ~self.zero_persistence
        return [(float(b), float(d)) for b, d in zip(
                self.dot_births[keep], self.dot_deaths[keep])]

    def alive_at(self, tau):
        "Classes alive at level tau, birth inclusive and death exclusive"
        tau = self.essential_births.dtype.type(tau)
        return (int(np.count_nonzero(self.essential_births >= tau))
            + int(np.count_nonzero((self.dot_births >= tau)
                    & (tau > self.dot_deaths))))

    def rows(self):
        "CSV rows: essentials by birth, then dots by persistence"
        rows = []
        order = np.lexsort((self.essential_vertices, -self.essential_births))
        for i in order:
            rows.append(['%.6f' % self.essential_births[i], 'inf', 'inf',
                    int(self.essential_vertices[i]), 1])
        persistence = self.persistence
        order = np.lexsort((self.dot_vertices, -persistence))
        for i in order:
            rows.append(['%.6f' % self.dot_births[i],
                    '%.6f' % self.dot_deaths[i], '%.6f' % persistence[i],
                    int(self.dot_vertices[i]), 0])
        return rows

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(DIAGRAM_CSV_HEADER)
            writer.writerows(self.rows())
        return path


@dataclass(frozen=True, eq=False)
class PCountResult:
    count: int
    labels: np.ndarray
    diagram: PersistenceDiagram
    forest: MergeForest = None


@njit(cache=False)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=False)
def _insert_sorted(array, size, value):
    "Insert into the sorted prefix array[:size] unless present"
    i = 0
    while i < size and array[i] < value:
        i += 1
    if i < size and array[i] == value:
        return size
    j = size
    while j > i:
        array[j] = array[j - 1]
        j -= 1
    array[i] = value
    return size + 1


@njit(cache=False)
def _sweep(order, values, nx, ny, nz, theta):
    n = order.size
    nxy = nx * ny
    rank = np.full(values.size, -1, np.int64)
    for r in range(n):
        rank[order[r]] = r
    parent = np.arange(n)
    support = np.arange(n)
    capacity = 3 * n + 1
    dot_births = np.empty(capacity, values.dtype)
    dot_deaths = np.empty(capacity, values.dtype)
    dot_vertices = np.empty(capacity, np.int64)
    ndots = 0
    roots = np.empty(6, np.int64)
    elders = np.empty(6, np.int64)
    for r in range(n):
        v = order[r]
        t = values[v]
        x = v % nx
        y = (v // nx) % ny
        z = v // nxy
        k = 0
        m = 0
        for j in range(6):
            if j == 0:
                if x == 0:
                    continue
                w = v - 1
            elif j == 1:
                if x == nx - 1:
                    continue
                w = v + 1
            elif j == 2:
                if y == 0:
                    continue
                w = v - nx
            elif j == 3:
                if y == ny - 1:
                    continue
                w = v + nx
            elif j == 4:
                if z == 0:
                    continue
                w = v - nxy
            else:
                if z == nz - 1:
                    continue
                w = v + nxy
            q = rank[w]
            # lower star: neighbours already swept
            if q < 0 or q >= r:
                continue
            k = _insert_sorted(roots, k, _find(parent, q))
            m = _insert_sorted(elders, m, _find(support, q))
        if k == 0:
            continue
        older = roots[0]
        parent[r] = older
        for i in range(1, k):
            younger = roots[i]
            birth = values[order[younger]]
            dot_births[ndots] = birth
            dot_deaths[ndots] = t
            dot_vertices[ndots] = order[younger]
            ndots += 1
            if birth - t <= theta:
                parent[younger] = older
        support[r] = elders[0]
        for i in range(1, m):
            support[elders[i]] = elders[0]
    for r in range(n):
        _find(parent, r)
        _find(support, r)
    return (parent, support, dot_births[:ndots], dot_deaths[:ndots],
        dot_vertices[:ndots])


@njit(cache=False)
def _labels(order, parent, size):
    labels = np.zeros(size, np.int64)
    for r in range(order.size):
        labels[order[r]] = order[_find(parent, r)] + 1
    return labels


def build_filtration_order(vol, mask_eps=0.0):
    "Foreground vertices by decreasing probability, ties by index"
    if not 0 <= mask_eps < 1:
        raise ValueError('mask_eps must lie in [0, 1), got %r' % mask_eps)
    ids = np.flatnonzero(vol.data > vol.level(mask_eps)).astype(np.int64)
    values = vol.data[ids]
    order = np.lexsort((ids, -values))
    return ForegroundGraph(vol.dims, ids[order], values[order],
        float(mask_eps))


def _run(vol, theta, mask_eps):
    graph = build_filtration_order(vol, mask_eps)
    nx, ny, nz = vol.dims
    parent, support, births, deaths, vertices = _sweep(graph.vertex_ids,
        vol.data, nx, ny, nz, vol.level(theta))
    essentials = np.flatnonzero(support == np.arange(support.size))
    diagram = PersistenceDiagram(births, deaths, vertices,
        graph.vertex_values[essentials], graph.vertex_ids[essentials])
    return graph, parent, diagram


def pcount_merge(vol, theta, mask_eps=0.0):
    "Count components surviving persistence-thresholded merging"
    if not theta >= 0:
        raise ValueError('theta must be >= 0, got %r' % theta)
    graph, parent, diagram = _run(vol, theta, mask_eps)
    labels = _labels(graph.vertex_ids, parent, vol.size)
    count = int(np.count_nonzero(parent == np.arange(parent.size)))
    logger.debug('Counted %d lesions at theta %s over %d foreground voxels',
        count, theta, len(graph))
    return PCountResult(count, labels, diagram,
        MergeForest(parent, graph.vertex_ids, graph.vertex_values))


def compute_persistence(vol, mask_eps=0.0):
    "Canonical elder-rule diagram: every merge performed"
    _, _, diagram = _run(vol, np.inf, mask_eps)
    return diagram


def count_from_diagram(pd, theta):
    if not theta >= 0:
        raise ValueError('theta must be >= 0, got %r' % theta)
    persistence = pd.persistence
    theta = persistence.dtype.type(theta)
    return (pd.essential_births.size
        + int(np.count_nonzero(persistence > theta)))
