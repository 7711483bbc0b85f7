"""Morrey, BMO and Lebesgue norm estimators over families of sub-balls.

The supremum over all balls is approximated by a dyadic family of radii
and a strided sublattice of centres.  Ball sums for every centre at once
come from an FFT convolution with the discrete ball; the reported value is
then re-summed directly on the attaining ball.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .grid import Field, GridDomain


@dataclass(frozen=True)
class BallFamily:
    """Centres (flat node indices) times dyadic radii.

    ``contained=True`` keeps only balls inside the unit ball, as the BMO
    seminorm requires; otherwise balls are intersected with it.
    """

    domain: GridDomain
    centers: np.ndarray
    radii: np.ndarray
    contained: bool
    stride: int

    @classmethod
    def dyadic(cls, domain: GridDomain, contained: bool = False, stride: int | None = None,
               min_radius_cells: float = 4.0, centers=None):
        h = domain.h
        radii = []
        k = 0
        while True:
            r = 2.0**-k * (1.0 - h)
            if r < min_radius_cells * h:
                break
            radii.append(r)
            k += 1
        if stride is None:
            stride = max(1, domain.N // 32)
        if centers is None:
            idx = np.arange(domain.n_nodes)
            on_lattice = np.ones(domain.n_nodes, dtype=bool)
            for axis in range(domain.m):
                pos = (idx // domain.N ** (domain.m - 1 - axis)) % domain.N
                on_lattice &= (pos - (domain.N - 1) // 2) % stride == 0
            centers = np.flatnonzero(on_lattice & domain.valid)
        return cls(domain, np.asarray(centers, dtype=np.int64), np.asarray(radii), contained, stride)

    def pairs(self):
        """Boolean admissibility matrix (n_radii, n_centers)."""
        cr = self.domain.radius[self.centers]
        if self.contained:
            return cr[None, :] + self.radii[:, None] <= 1.0 + 1e-12
        return np.ones((self.radii.size, self.centers.size), dtype=bool)

    def describe(self) -> dict:
        return {"n_centers": int(self.centers.size), "radii": [float(r) for r in self.radii],
                "stride": self.stride, "contained": self.contained,
                "n_balls": int(self.pairs().sum())}


@dataclass
class NormReport:
    kind: str
    value: float
    center: list
    radius: float
    family: dict
    N: int
    per_ball: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("per_ball")
        return out

    def per_ball_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["center_node", *[f"x{i}" for i in range(len(self.center))], "radius", "value"])
        for row in self.per_ball:
            w.writerow(row)
        return buf.getvalue()


def _ball_kernel(domain: GridDomain, radius: float) -> np.ndarray:
    R = int(np.floor(radius / domain.h + 1e-9))
    ax = np.arange(-R, R + 1)
    grids = np.meshgrid(*[ax] * domain.m, indexing="ij")
    d2 = sum(g.astype(float) ** 2 for g in grids) * domain.h**2
    return (d2 <= radius**2 * (1 + 1e-12)).astype(float)


def _ball_sums(domain: GridDomain, grid_values: np.ndarray, radius: float) -> np.ndarray:
    kern = _ball_kernel(domain, radius)
    g = grid_values.reshape(domain.grid_shape)
    return fftconvolve(g, kern, mode="same").ravel()


def _check_family(family: BallFamily, f: Field):
    if family.domain is not f.domain:
        raise ValueError("ball family and field live on different domains")
    if family.centers.size == 0 or family.radii.size == 0 or not family.pairs().any():
        raise ValueError("empty ball family")


def _report(kind, f, family, best, per_ball, verbose):
    r_i, c_i, value = best
    dom = f.domain
    node = int(family.centers[c_i])
    rows = []
    if verbose:
        rows = [[int(family.centers[c]), *map(float, dom.coords[family.centers[c]]), float(family.radii[r]), float(v)]
                for r, c, v in per_ball]
    return NormReport(kind, float(value), [float(x) for x in dom.coords[node]], float(family.radii[r_i]),
                      family.describe(), dom.N, rows)


def morrey_norm(f: Field, family: BallFamily | None = None, verbose: bool = False) -> NormReport:
    """max over the family of (r^{2-m} sum_{B_r(x) cap B_1} |f|^2 h^m)^{1/2}."""
    dom = f.domain
    family = BallFamily.dyadic(dom) if family is None else family
    _check_family(family, f)
    dens = f.pointwise_norm() ** 2
    dens[~dom.valid] = 0.0
    adm = family.pairs()
    best = (0, 0, -1.0)
    per_ball = []
    for r_i, r in enumerate(family.radii):
        sums = np.maximum(_ball_sums(dom, dens, r)[family.centers], 0.0)
        vals = np.sqrt(r ** (2 - dom.m) * sums * dom.cell_volume)
        vals[~adm[r_i]] = -1.0
        c_i = int(np.argmax(vals))
        if vals[c_i] > best[2]:
            best = (r_i, c_i, vals[c_i])
        if verbose:
            per_ball += [(r_i, c, v) for c, v in enumerate(vals) if adm[r_i, c]]
    r_i, c_i, _ = best
    r = family.radii[r_i]
    ball = dom.ball(dom.coords[family.centers[c_i]], r)
    exact = np.sqrt(r ** (2 - dom.m) * dens[ball].sum() * dom.cell_volume)
    return _report("morrey", f, family, (r_i, c_i, exact), per_ball, verbose)


def bmo_seminorm(f: Field, family: BallFamily | None = None, verbose: bool = False) -> NormReport:
    """max over contained balls of (r^{-m} sum_{B_r(x)} |f - mean|^2 h^m)^{1/2}."""
    dom = f.domain
    if f.degree != 0:
        raise ValueError("BMO seminorm needs a 0-form")
    family = BallFamily.dyadic(dom, contained=True) if family is None else family
    _check_family(family, f)
    vals_all = f.values.reshape(dom.n_nodes, -1).copy()
    vals_all[dom.valid] -= vals_all[dom.valid].mean(axis=0)
    vals_all[~dom.valid] = 0.0
    ind = dom.valid.astype(float)
    sq = (vals_all**2).sum(axis=1)
    adm = family.pairs()
    best = (0, 0, -1.0)
    per_ball = []
    for r_i, r in enumerate(family.radii):
        n = _ball_sums(dom, ind, r)[family.centers]
        s2 = _ball_sums(dom, sq, r)[family.centers]
        s1sq = sum(_ball_sums(dom, vals_all[:, c], r)[family.centers] ** 2 for c in range(vals_all.shape[1]))
        osc = np.maximum(s2 - s1sq / np.maximum(np.rint(n), 1.0), 0.0)
        vals = np.sqrt(r ** (-dom.m) * osc * dom.cell_volume)
        vals[~adm[r_i]] = -1.0
        c_i = int(np.argmax(vals))
        if vals[c_i] > best[2]:
            best = (r_i, c_i, vals[c_i])
        if verbose:
            per_ball += [(r_i, c, v) for c, v in enumerate(vals) if adm[r_i, c]]
    r_i, c_i, _ = best
    r = family.radii[r_i]
    ball = dom.ball(dom.coords[family.centers[c_i]], r)
    sub = vals_all[ball]
    exact = np.sqrt(r ** (-dom.m) * ((sub - sub.mean(axis=0)) ** 2).sum() * dom.cell_volume)
    return _report("bmo", f, family, (r_i, c_i, exact), per_ball, verbose)


def region_mask(domain: GridDomain, region=None) -> np.ndarray:
    """``None`` is the whole ball; a (center, radius) pair is a sub-ball; arrays pass through."""
    if region is None:
        return domain.valid
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region
    center, radius = region
    return domain.ball(center, radius)


def lp_norm(f: Field, p, region=None) -> float:
    """Masked Riemann-sum L^p norm (p = 1, 2) or nodal max (p = inf)."""
    mask = region_mask(f.domain, region)
    a = f.pointwise_norm()[mask]
    if p == 1:
        return float(a.sum() * f.domain.cell_volume)
    if p == 2:
        return float(np.sqrt((a**2).sum() * f.domain.cell_volume))
    if p == np.inf or p == "inf":
        return float(a.max(initial=0.0))
    raise ValueError(f"unsupported exponent p={p!r}; use 1, 2 or inf")


def ball_energy(f: Field, center, radius) -> float:
    """sum over B_r(center) cap B_1 of |f|^2 h^m."""
    mask = f.domain.ball(center, radius)
    return float((f.pointwise_norm()[mask] ** 2).sum() * f.domain.cell_volume)
