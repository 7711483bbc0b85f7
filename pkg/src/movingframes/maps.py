"""Named analytic map families used by the experiments and tests."""
from __future__ import annotations

import numpy as np

from .grid import Field, GridDomain
from .targets import Grassmann, MapField, Sphere, TargetManifold


def base_point(target: TargetManifold) -> np.ndarray:
    """A fixed reference point on the target."""
    if isinstance(target, Sphere):
        z = np.zeros(target.d)
        z[-1] = 1.0
        return z
    if isinstance(target, Grassmann):
        P = np.zeros((target.d0, target.d0))
        P[:target.rank, :target.rank] = np.eye(target.rank)
        return P.ravel()
    return np.eye(int(round(np.sqrt(target.d)))).ravel()


def smooth_perturbation(x: np.ndarray, d: int, freq: float = 1.0) -> np.ndarray:
    """A fixed smooth R^d-valued function of x (shape (n, m))."""
    m = x.shape[1]
    out = np.empty((x.shape[0], d))
    for a in range(d):
        phase = 0.7 * a + 0.3
        w = np.array([np.cos(1.3 * a + 0.2 * i + 0.5) for i in range(m)]) * freq
        out[:, a] = np.sin(x @ w + phase) + 0.5 * np.cos((a + 1) * x[:, a % m] * freq)
    return out


def constant_map(domain: GridDomain, target: TargetManifold) -> MapField:
    z = base_point(target)
    return MapField.from_function(domain, target, lambda x: np.broadcast_to(z, (x.shape[0], target.d)))


def perturbed_map(domain: GridDomain, target: TargetManifold, amplitude: float,
                  freq: float = 1.0) -> MapField:
    """project(base + amplitude * smooth perturbation): the shrinking family as amplitude -> 0."""
    z0 = base_point(target)
    return MapField.from_function(
        domain, target, lambda x: z0 + amplitude * smooth_perturbation(x, target.d, freq))


def linear_projected_map(domain: GridDomain, target: TargetManifold, slope: float = 1.0) -> MapField:
    """project(base + slope * L x) for a fixed linear map L."""
    z0 = base_point(target)
    rng = np.random.default_rng(12345)
    L = rng.normal(size=(target.d, domain.m)) / np.sqrt(domain.m)
    return MapField.from_function(domain, target, lambda x: z0 + slope * x @ L.T)


def hedgehog_map(domain: GridDomain) -> MapField:
    """x / |x| into S^{m-1}; needs a domain with an inner cutoff."""
    if domain.inner_cutoff == 0:
        raise ValueError("the hedgehog map is singular at 0; use an inner cutoff")
    return MapField.from_function(domain, Sphere(domain.m - 1), lambda x: x)


def band_limited(domain: GridDomain, seed: int, max_freq: int | None = None,
                 n_terms: int = 6) -> Field:
    """Random trigonometric polynomial with integer frequencies <= max_freq (default N/8)."""
    rng = np.random.default_rng(seed)
    kmax = max(1, domain.N // 8 if max_freq is None else max_freq)
    ks = rng.integers(-kmax, kmax + 1, size=(n_terms, domain.m))
    amps = rng.normal(size=n_terms) / (1.0 + np.abs(ks).sum(axis=1))
    phases = rng.uniform(0, 2 * np.pi, size=n_terms)
    scale = 0.5 * np.pi

    def fn(x):
        return (amps * np.sin(scale * x @ ks.T + phases)).sum(axis=1)
    return Field.from_function(domain, fn)


def random_map(domain: GridDomain, target: TargetManifold, seed: int, amplitude: float = 0.5,
               max_freq: int = 2) -> MapField:
    """project(base + amplitude * band-limited noise) with a mandatory seed."""
    z0 = base_point(target)
    comps = np.stack([band_limited(domain, seed * 1000 + a, max_freq).nodal
                      for a in range(target.d)], axis=1)
    vals = np.zeros((domain.n_nodes, target.d))
    vals[domain.valid] = z0 + amplitude * comps[domain.valid]
    return MapField(Field.from_nodes(domain, vals), target)


def equatorial_boundary(x: np.ndarray) -> np.ndarray:
    """The great-circle parametrisation (cos t, sin t, 0) of the unit circle, extended radially."""
    r = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)
    out = np.zeros((x.shape[0], 3))
    out[:, :2] = x[:, :2] / r
    return out
