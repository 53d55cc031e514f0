"""Shared instance builders for the test suite."""

import numpy as np
import pytest

from searchplan import AgentProfile, OccupancyGrid, ProbabilityGrid, SearchGraph


def make_line_world(n_cells, masses=None, radius=0.45):
    """1 x n world: node i at cell i's center, chain adjacency, sensing radius
    small enough that each node sees exactly its own cell."""
    occ = OccupancyGrid(1.0, np.zeros((1, n_cells), dtype=bool))
    positions = np.array([[i + 0.5, 0.5] for i in range(n_cells)], dtype=np.float64)
    adj = np.zeros((n_cells, n_cells), dtype=bool)
    dist = np.zeros((n_cells, n_cells))
    for i in range(n_cells - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
        dist[i, i + 1] = dist[i + 1, i] = 1.0
    graph = SearchGraph(positions, adj, dist, grid_distance=1.0)
    if masses is None:
        masses = np.full(n_cells, 1.0 / n_cells)
    prior = ProbabilityGrid(1.0, np.asarray(masses, dtype=np.float64).reshape(1, n_cells))
    profile = AgentProfile(0, (0.5, 0.5), visibility_radius=radius, speed=1.0)
    return occ, graph, prior, profile


def make_open_grid_world(nx, ny, radius=0.6, resolution=1.0):
    """Obstacle-free nx x ny lattice with 8-neighborhood arcs, one node per cell."""
    occ = OccupancyGrid(resolution, np.zeros((ny, nx), dtype=bool))
    positions = np.array(
        [[(ix + 0.5) * resolution, (iy + 0.5) * resolution] for iy in range(ny) for ix in range(nx)]
    )
    n = nx * ny
    adj = np.zeros((n, n), dtype=bool)
    dist = np.zeros((n, n))
    for a in range(n):
        ay, ax = divmod(a, nx)
        for b in range(a + 1, n):
            by, bx = divmod(b, nx)
            if abs(ax - bx) <= 1 and abs(ay - by) <= 1:
                d = np.hypot((ax - bx) * resolution, (ay - by) * resolution)
                adj[a, b] = adj[b, a] = True
                dist[a, b] = dist[b, a] = d
    graph = SearchGraph(positions, adj, dist, grid_distance=resolution)
    return occ, graph
