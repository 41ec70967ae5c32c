"""
Shared sampling helpers: low-discrepancy boxes, tensor grids and balls.
"""
import math
from typing import Sequence, Union

import numpy as np
from scipy.stats import qmc

RadiusLike = Union[float, Sequence[float], np.ndarray]


def sobol_box(radius: RadiusLike, dim: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points in the box [-radius, radius]^dim, shape (n_samples, dim)."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    # draw a power of two to keep the balance properties, then truncate
    points = sampler.random_base2(m=max(int(math.ceil(math.log2(max(n_samples, 1)))), 0))[:n_samples]
    r = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
    return (2.0 * points - 1.0) * r


def tensor_grid(radius: RadiusLike, dim: int, per_axis: int) -> np.ndarray:
    """Full tensor grid with endpoints, shape (per_axis**dim, dim)."""
    r = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
    axes = [np.linspace(-ri, ri, per_axis) for ri in r]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def midpoint_grid(radius: RadiusLike, dim: int, per_axis: int) -> np.ndarray:
    """Cell midpoints of a uniform tensor grid with per_axis cells per axis."""
    r = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
    axes = [-ri + (2.0 * np.arange(per_axis) + 1.0) * ri / per_axis for ri in r]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def box_corners(radius: RadiusLike, dim: int) -> np.ndarray:
    r = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij")).reshape(dim, -1).T
    return signs * r


def ball_sample(center: np.ndarray, radius: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the closed Euclidean ball, shape (n_samples, len(center))."""
    center = np.asarray(center, dtype=float)
    dim = center.shape[0]
    directions = rng.standard_normal((n_samples, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = radius * rng.random((n_samples, 1)) ** (1.0 / dim)
    return center + directions / norms * radii


def power_of_two_above(value: float) -> float:
    """Smallest power of two strictly greater than value (and than 1)."""
    exponent = max(int(math.floor(math.log2(value))) + 1, 1) if value > 0 else 1
    result = 2.0 ** exponent
    while result <= value:
        result *= 2.0
    return result


def sphere_sample(center: np.ndarray, radius: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the sphere of the given radius."""
    center = np.asarray(center, dtype=float)
    directions = rng.standard_normal((n_samples, center.shape[0]))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return center + radius * directions / norms
