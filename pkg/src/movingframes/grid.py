"""Discrete fields on masked ball domains and exterior calculus on them.

Nodes of a uniform grid over [-1, 1]^m are stored flat in row-major order.
A field of form degree ``k`` keeps one component per sorted index tuple
``I = (i_1 < ... < i_k)``, so its array has shape
``(n_nodes, n_components, *value_shape)``.  Derivatives are sparse matrices
acting on the node axis: central differences on interior nodes and
second-order one-sided differences on the boundary layer.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (final relative residual {residual:.3e})")
        self.residual = residual


def _exact_spacing(N: int) -> float:
    h = 2.0 / (N - 1)
    if h * (N - 1) == 2.0:
        return h
    for cand in (np.nextafter(h, np.inf), np.nextafter(h, 0.0)):
        if cand * (N - 1) == 2.0:
            return float(cand)
    return h


def form_indices(m: int, k: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(m), k))


class GridDomain:
    """Uniform node grid on [-1, 1]^m with an inscribed-ball mask.

    Parameters
    ----------
    m : int
        Spatial dimension, 2 or 3.
    N : int
        Nodes per axis (at least 8).
    shape : {"ball", "cube-periodic"}
        ``"ball"`` masks the unit ball; ``"cube-periodic"`` treats every node
        as interior and wraps the difference stencils.
    inner_cutoff : int
        Radius, in grid spacings, of a hole removed around the origin
        (0 for none).  Used for maps singular at the origin.

    Notes
    -----
    Coordinates are ``x = j / (N - 1)`` with integer ``j = 2 i - (N - 1)``,
    and the mask is classified with integer arithmetic on ``sum(j**2)``, so
    it is exactly symmetric under sign flips and coordinate permutations.
    """

    def __init__(self, m: int, N: int, shape: str = "ball", inner_cutoff: int = 0):
        if m not in (2, 3):
            raise ValueError(f"dimension m must be 2 or 3, got {m}")
        if N < 8:
            raise ValueError(f"resolution N must be at least 8, got {N}")
        if shape not in ("ball", "cube-periodic"):
            raise ValueError(f"unknown domain shape {shape!r}")
        if inner_cutoff < 0 or (inner_cutoff and shape != "ball"):
            raise ValueError("inner_cutoff needs a ball domain and must be >= 0")
        self.m = int(m)
        self.N = int(N)
        self.shape = shape
        self.inner_cutoff = int(inner_cutoff)
        self.h = _exact_spacing(self.N)

        grids = np.meshgrid(*[2 * np.arange(N) - (N - 1)] * m, indexing="ij")
        self._ij = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
        self.coords = self._ij / (N - 1)
        self.n_nodes = N**m
        self.grid_shape = (N,) * m
        self.mask = self._classify()

    def __repr__(self):
        return (f"GridDomain(m={self.m}, N={self.N}, shape={self.shape!r}, "
                f"inner_cutoff={self.inner_cutoff})")

    def _classify(self):
        mask = np.full(self.n_nodes, EXTERIOR, dtype=np.int8)
        if self.shape == "cube-periodic":
            mask[:] = INTERIOR
            return mask
        r2 = (self._ij**2).sum(axis=1)
        outer_in, outer_bl = (self.N - 3) ** 2, (self.N - 1) ** 2
        c = self.inner_cutoff
        interior = r2 < outer_in
        valid = r2 <= outer_bl
        if c:
            interior &= r2 > (2 * c + 2) ** 2
            valid &= r2 >= (2 * c) ** 2
        mask[valid] = BOUNDARY
        mask[interior] = INTERIOR
        return mask

    @property
    def periodic(self) -> bool:
        return self.shape == "cube-periodic"

    @property
    def inner_radius(self) -> float:
        return self.inner_cutoff * self.h

    @property
    def cell_volume(self) -> float:
        return self.h**self.m

    @cached_property
    def valid(self) -> np.ndarray:
        return self.mask != EXTERIOR

    @cached_property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt((self.coords**2).sum(axis=1))

    def core(self, depth: int = 1) -> np.ndarray:
        """Interior nodes whose axis neighbours up to ``depth`` steps are interior."""
        keep = self.interior.copy()
        for _ in range(depth):
            grown = keep.copy()
            for axis in range(self.m):
                for s in (-1, 1):
                    nb, ok = self.neighbor(axis, s)
                    grown &= ok & keep[nb]
            keep = grown
        return keep

    def ball(self, center: Sequence[float], radius: float) -> np.ndarray:
        """Valid nodes within closed distance ``radius`` of ``center``."""
        d2 = ((self.coords - np.asarray(center, dtype=float)) ** 2).sum(axis=1)
        return self.valid & (d2 <= radius**2 * (1 + 1e-12))

    def nearest_node(self, point: Sequence[float]) -> int:
        d2 = ((self.coords - np.asarray(point, dtype=float)) ** 2).sum(axis=1)
        d2[~self.valid] = np.inf
        return int(np.argmin(d2))

    def neighbor(self, axis: int, step: int):
        """Flat index of the node ``step`` cells along ``axis`` and an in-grid flag."""
        idx = np.arange(self.n_nodes)
        stride = self.N ** (self.m - 1 - axis)
        pos = (idx // stride) % self.N
        new = pos + step
        if self.periodic:
            new = new % self.N
            return idx + (new - pos) * stride, np.ones(self.n_nodes, dtype=bool)
        ok = (new >= 0) & (new < self.N)
        return np.where(ok, idx + step * stride, idx), ok

    @cached_property
    def derivative_matrices(self) -> list[sp.csr_matrix]:
        return [self._derivative_matrix(i) for i in range(self.m)]

    def _derivative_matrix(self, axis: int) -> sp.csr_matrix:
        n, h = self.n_nodes, self.h
        nbrs = {}
        for s in (-2, -1, 1, 2):
            nb, ok = self.neighbor(axis, s)
            nbrs[s] = (nb, ok & self.valid[nb])
        rows, cols, vals = [], [], []

        def put(sel, offsets_coeffs):
            r = np.flatnonzero(sel)
            for s, c in offsets_coeffs:
                rows.append(r)
                cols.append(r if s == 0 else nbrs[s][0][r])
                vals.append(np.full(r.size, c / h))

        if self.periodic:
            put(np.ones(n, dtype=bool), [(1, 0.5), (-1, -0.5)])
            return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(n, n))

        interior = self.interior
        bl = self.mask == BOUNDARY
        fwd2 = nbrs[1][1] & nbrs[2][1]
        bwd2 = nbrs[-1][1] & nbrs[-2][1]
        inward_fwd = self.coords[:, axis] <= 0
        use_fwd = bl & fwd2 & (inward_fwd | ~bwd2)
        use_bwd = bl & bwd2 & ~use_fwd
        rest = bl & ~use_fwd & ~use_bwd
        central = interior | (rest & nbrs[1][1] & nbrs[-1][1])
        rest &= ~central
        fwd1 = rest & nbrs[1][1]
        bwd1 = rest & ~fwd1 & nbrs[-1][1]

        put(central, [(1, 0.5), (-1, -0.5)])
        put(use_fwd, [(0, -1.5), (1, 2.0), (2, -0.5)])
        put(use_bwd, [(0, 1.5), (-1, -2.0), (-2, 0.5)])
        put(fwd1, [(0, -1.0), (1, 1.0)])
        put(bwd1, [(0, 1.0), (-1, -1.0)])
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """Compact (2m+1)-point Laplacian, rows only on interior nodes."""
        n, h2 = self.n_nodes, self.h**2
        rows = np.flatnonzero(self.interior)
        r_all, c_all, v_all = [rows], [rows], [np.full(rows.size, -2.0 * self.m / h2)]
        for axis in range(self.m):
            for s in (-1, 1):
                nb, _ = self.neighbor(axis, s)
                r_all.append(rows)
                c_all.append(nb[rows])
                v_all.append(np.full(rows.size, 1.0 / h2))
        return sp.csr_matrix((np.concatenate(v_all), (np.concatenate(r_all), np.concatenate(c_all))),
                             shape=(n, n))

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned edges joining two valid nodes, as (tail, head) arrays."""
        tails, heads = [], []
        for axis in range(self.m):
            nb, ok = self.neighbor(axis, 1)
            sel = self.valid & ok & self.valid[nb]
            tails.append(np.flatnonzero(sel))
            heads.append(nb[sel])
        return np.concatenate(tails), np.concatenate(heads)


VALUE_CODES = {0: "scalar", 1: "vector", 2: "matrix"}


@dataclass
class Field:
    """A k-form with scalar, vector or matrix values on a :class:`GridDomain`.

    ``values`` has shape ``(n_nodes, n_components, *value_shape)`` where the
    components follow :func:`form_indices`.  ``zeroed`` records that
    exterior nodes hold exact zeros.
    """

    domain: GridDomain
    degree: int
    values: np.ndarray
    zeroed: bool = dc_field(default=True)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        ncomp = len(form_indices(self.domain.m, self.degree))
        if self.values.ndim < 2 or self.values.shape[:2] != (self.domain.n_nodes, ncomp):
            raise ValueError(
                f"degree-{self.degree} field on m={self.domain.m} needs leading shape "
                f"({self.domain.n_nodes}, {ncomp}), got {self.values.shape}")
        if self.values.ndim > 4:
            raise ValueError("values must be scalar, vector or matrix per component")
        if self.zeroed:
            outside = ~self.domain.valid
            if outside.any() and np.any(self.values[outside]):
                self.values = self.values.copy()
                self.values[outside] = 0.0

    @property
    def value_shape(self) -> tuple[int, ...]:
        return self.values.shape[2:]

    @property
    def value_kind(self) -> str:
        return VALUE_CODES[len(self.value_shape)]

    @property
    def components(self) -> list[tuple[int, ...]]:
        return form_indices(self.domain.m, self.degree)

    @classmethod
    def zeros(cls, domain, degree=0, value_shape=()):
        ncomp = len(form_indices(domain.m, degree))
        return cls(domain, degree, np.zeros((domain.n_nodes, ncomp, *value_shape)))

    @classmethod
    def from_function(cls, domain: GridDomain, fn: Callable, degree: int = 0):
        """Evaluate ``fn(x)`` on valid nodes; ``x`` has shape (n_valid, m).

        For degree 0, ``fn`` returns values of shape (n_valid, *value_shape);
        for higher degree, (n_valid, n_components, *value_shape).
        """
        sel = domain.valid
        out = np.asarray(fn(domain.coords[sel]), dtype=float)
        if degree == 0:
            out = out[:, None]
        vals = np.zeros((domain.n_nodes, *out.shape[1:]))
        vals[sel] = out
        return cls(domain, degree, vals)

    @classmethod
    def from_nodes(cls, domain: GridDomain, node_values, degree: int = 0):
        """Wrap a degree-0 array of shape (n_nodes, *value_shape)."""
        node_values = np.asarray(node_values, dtype=float)
        return cls(domain, 0, node_values[:, None]) if degree == 0 else cls(domain, degree, node_values)

    @property
    def nodal(self) -> np.ndarray:
        """Degree-0 values without the component axis."""
        if self.degree != 0:
            raise ValueError("nodal view needs a degree-0 field")
        return self.values[:, 0]

    def copy(self):
        return Field(self.domain, self.degree, self.values.copy(), self.zeroed)

    def with_values(self, values):
        return Field(self.domain, self.degree, values)

    def __add__(self, other):
        if np.isscalar(other):
            # constants live on the valid nodes only
            return self.with_values(self.values + other)
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    __radd__ = __add__

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def pointwise_norm(self) -> np.ndarray:
        """Euclidean/Frobenius norm over components and values at each node."""
        return np.sqrt((self.values.reshape(self.domain.n_nodes, -1) ** 2).sum(axis=1))

    def skewness(self) -> float:
        """max over nodes of |M^T + M| for matrix-valued fields."""
        if self.value_kind != "matrix":
            raise ValueError("skewness needs a matrix-valued field")
        v = self.values
        return float(np.abs(v + np.swapaxes(v, -1, -2)).max(initial=0.0))


def _check_same(a: Field, b: Field):
    if a.domain is not b.domain or a.degree != b.degree or a.value_shape != b.value_shape:
        raise ValueError("fields differ in domain, degree or value shape")


def _apply(D, values):
    n = values.shape[0]
    return (D @ values.reshape(n, -1)).reshape(values.shape)


def _sign_and_rest(i, index):
    """Position sign of inserting axis ``i`` into sorted ``index`` and the merged tuple."""
    merged = tuple(sorted(index + (i,)))
    return (-1) ** merged.index(i), merged


def exterior_derivative(f: Field) -> Field:
    """d: k-forms to (k+1)-forms, componentwise on the values."""
    m, k = f.domain.m, f.degree
    if k >= m:
        raise ValueError(f"exterior derivative of a degree-{k} form on m={m} overflows")
    D = f.domain.derivative_matrices
    src = {I: c for c, I in enumerate(f.components)}
    out_idx = form_indices(m, k + 1)
    out = np.zeros((f.domain.n_nodes, len(out_idx), *f.value_shape))
    for c, J in enumerate(out_idx):
        for p, j in enumerate(J):
            rest = J[:p] + J[p + 1:]
            out[:, c] += (-1) ** p * _apply(D[j], f.values[:, src[rest]])
    return Field(f.domain, k + 1, out)


def codifferential(f: Field) -> Field:
    """d* with the negative-divergence sign: d*X = -sum_i d_i X_i."""
    m, k = f.domain.m, f.degree
    if k < 1:
        raise ValueError("codifferential of a 0-form underflows")
    D = f.domain.derivative_matrices
    src = {I: c for c, I in enumerate(f.components)}
    out_idx = form_indices(m, k - 1)
    out = np.zeros((f.domain.n_nodes, len(out_idx), *f.value_shape))
    for c, I in enumerate(out_idx):
        for i in range(m):
            if i in I:
                continue
            sign, merged = _sign_and_rest(i, I)
            out[:, c] -= sign * _apply(D[i], f.values[:, src[merged]])
    return Field(f.domain, k - 1, out)


def laplacian(f: Field) -> Field:
    """Compact (2m+1)-point Laplacian, componentwise; zero off interior nodes."""
    return f.with_values(_apply(f.domain.laplacian_matrix, f.values))


def wedge(a: Field, b: Field, product: str | None = None) -> Field:
    """Pointwise wedge product of forms.

    ``product=None`` multiplies values elementwise and needs one scalar-valued
    factor; ``"matmul"`` contracts matrix values as in ``omega ^ omega``;
    ``"dot"`` contracts two vector values to a scalar.
    """
    if a.domain is not b.domain:
        raise ValueError("wedge of fields on different domains")
    m = a.domain.m
    j, k = a.degree, b.degree
    if j + k > m:
        raise ValueError(f"wedge degree {j + k} exceeds dimension {m}")
    if product is None:
        if a.value_shape and b.value_shape:
            raise ValueError("wedge needs a scalar factor unless a product is named")
        mult = _scalar_mult
    elif product == "matmul":
        if a.value_kind != "matrix" or b.value_kind != "matrix":
            raise ValueError("matmul wedge needs two matrix-valued forms")
        mult = np.matmul
    elif product == "dot":
        if a.value_kind != "vector" or b.value_kind != "vector":
            raise ValueError("dot wedge needs two vector-valued forms")
        mult = lambda x, y: (x * y).sum(axis=-1)  # noqa: E731
    else:
        raise ValueError(f"unknown wedge product {product!r}")
    a_idx = {I: c for c, I in enumerate(a.components)}
    b_idx = {I: c for c, I in enumerate(b.components)}
    out_idx = form_indices(m, j + k)
    acc = []
    for J in out_idx:
        total = 0.0
        for I in itertools.combinations(J, j):
            K = tuple(x for x in J if x not in I)
            sign = _perm_sign(I + K)
            total = total + sign * mult(a.values[:, a_idx[I]], b.values[:, b_idx[K]])
        acc.append(total)
    return Field(a.domain, j + k, np.stack(acc, axis=1))


def _scalar_mult(x, y):
    while x.ndim < y.ndim:
        x = x[..., None]
    while y.ndim < x.ndim:
        y = y[..., None]
    return x * y


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def inner(a: Field, b: Field, region: np.ndarray | None = None) -> float:
    """L2 pairing sum over nodes of <a, b> h^m on ``region`` (default: valid nodes)."""
    _check_same(a, b)
    region = a.domain.valid if region is None else region
    prod = (a.values[region] * b.values[region]).reshape(int(region.sum()), -1).sum(axis=1)
    return float(prod.sum() * a.domain.cell_volume)


def l2_norm(f: Field, region: np.ndarray | None = None) -> float:
    region = f.domain.valid if region is None else region
    return float(np.sqrt((f.pointwise_norm()[region] ** 2).sum() * f.domain.cell_volume))


# ---------------------------------------------------------------------------
# Poisson solver
# ---------------------------------------------------------------------------

THETA_MIN = 0.05


class _DirichletSystem(NamedTuple):
    unknowns: np.ndarray        # flat node indices solved for
    fixed: np.ndarray           # open-domain nodes pinned to boundary data
    matrix: sp.csr_matrix       # SPD, scaled by h^2
    bnd_rows: np.ndarray        # row (into unknowns) of each boundary crossing
    bnd_points: np.ndarray      # crossing point coordinates
    bnd_weight: np.ndarray      # 1/theta coefficient of each crossing
    pin_rows: np.ndarray        # row of a neighbour that is a fixed node
    pin_nodes: np.ndarray


def _crossing(x, axis, step, h, radius, outward):
    b = 2 * step * h * x[:, axis]
    c = (x**2).sum(axis=1) - radius**2
    disc = np.sqrt(np.maximum(b * b - 4 * h * h * c, 0.0))
    t = (-b + disc) / (2 * h * h) if outward else (-b - disc) / (2 * h * h)
    return np.clip(t, 1e-12, 1.0)


def _dirichlet_system(domain: GridDomain) -> _DirichletSystem:
    cached = getattr(domain, "_poisson_cache", None)
    if cached is not None:
        return cached
    h, R0 = domain.h, domain.inner_radius
    r2 = (domain._ij**2).sum(axis=1)
    inside = r2 < (domain.N - 1) ** 2
    if domain.inner_cutoff:
        inside &= r2 > (2 * domain.inner_cutoff) ** 2
    x = domain.coords

    # fraction theta of the step towards each neighbour outside the open domain
    thetas = []
    for axis in range(domain.m):
        for s in (-1, 1):
            nb, ok = domain.neighbor(axis, s)
            out = inside & ~(ok & inside[nb])
            theta = np.ones(domain.n_nodes)
            if out.any():
                outer = (r2[nb] >= (domain.N - 1) ** 2) | ~ok
                t_out = _crossing(x[out], axis, s, h, 1.0, True)
                t_in = _crossing(x[out], axis, s, h, max(R0, 1e-300), False) if R0 else t_out
                theta[out] = np.where(outer[out], t_out, t_in)
            thetas.append((axis, s, nb, out, theta))
    min_theta = np.min([t for *_, t in thetas], axis=0)
    fixed_sel = inside & (min_theta < THETA_MIN)
    unk_sel = inside & ~fixed_sel
    unknowns = np.flatnonzero(unk_sel)
    row_of = np.full(domain.n_nodes, -1)
    row_of[unknowns] = np.arange(unknowns.size)

    diag = np.zeros(unknowns.size)
    rows, cols = [], []
    b_rows, b_pts, b_w, p_rows, p_nodes = [], [], [], [], []
    for axis, s, nb, out, theta in thetas:
        nbu = nb[unknowns]
        reg = unk_sel[nbu] & ~out[unknowns]
        diag[reg] += 1.0
        rows.append(np.flatnonzero(reg))
        cols.append(row_of[nbu[reg]])
        pinned = fixed_sel[nbu] & ~out[unknowns]
        diag[pinned] += 1.0
        p_rows.append(np.flatnonzero(pinned))
        p_nodes.append(nbu[pinned])
        crossing = out[unknowns]
        th = theta[unknowns][crossing]
        diag[crossing] += 1.0 / th
        pts = x[unknowns][crossing].copy()
        pts[:, axis] += s * th * h
        b_rows.append(np.flatnonzero(crossing))
        b_pts.append(pts)
        b_w.append(1.0 / th)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    n = unknowns.size
    K = sp.csr_matrix((np.concatenate([-np.ones(r.size), diag]),
                       (np.concatenate([r, np.arange(n)]), np.concatenate([c, np.arange(n)]))),
                      shape=(n, n))
    system = _DirichletSystem(unknowns, np.flatnonzero(fixed_sel), K,
                              np.concatenate(b_rows), np.concatenate(b_pts), np.concatenate(b_w),
                              np.concatenate(p_rows), np.concatenate(p_nodes))
    domain._poisson_cache = system
    return system


def _cg(K, b, N, x0=None):
    """Unpreconditioned CG to relative residual 1e-10 with cap 50 N^2."""
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    x, info = cg(K, b, x0=x0, rtol=1e-10, atol=0.0, maxiter=50 * N * N)
    res = np.linalg.norm(b - K @ x) / nb
    if info != 0 and res > 1e-10:
        raise ConvergenceError("Poisson CG did not converge", res)
    return x


def poisson_solve(rhs: Field, bc="dirichlet-zero") -> Field:
    """Solve ``Laplacian(phi) = rhs`` for each component of a 0-form.

    Parameters
    ----------
    rhs : Field
        Degree-0 right-hand side (any value shape).
    bc : "dirichlet-zero", "periodic" or callable
        A callable ``g(x) -> values`` gives Dirichlet data on the sphere
        ``|x| = 1`` (and on the inner cutoff sphere, if any).

    Returns
    -------
    Field
        The solution.  On ball domains boundary values are imposed where the
        grid lines cross the sphere (symmetric Gibou-type stencil), which
        keeps the solution second-order accurate.
    """
    dom = rhs.domain
    if rhs.degree != 0:
        raise ValueError("poisson_solve needs a degree-0 right-hand side")
    flat = rhs.values.reshape(dom.n_nodes, -1)
    out = np.zeros_like(flat)
    if bc == "periodic":
        if not dom.periodic:
            raise ValueError("periodic boundary condition needs a cube-periodic domain")
        K = -dom.laplacian_matrix * dom.h**2
        for c in range(flat.shape[1]):
            b = flat[:, c] - flat[:, c].mean()
            x = _cg(K, -b * dom.h**2, dom.N)
            out[:, c] = x - x.mean()
        return rhs.with_values(out.reshape(rhs.values.shape))
    if dom.periodic:
        raise ValueError("Dirichlet boundary condition needs a ball domain")

    sys_ = _dirichlet_system(dom)
    if bc == "dirichlet-zero":
        g_bnd = np.zeros((sys_.bnd_points.shape[0], flat.shape[1]))
        g_fix = np.zeros((sys_.fixed.size, flat.shape[1]))
    elif callable(bc):
        g_bnd = np.asarray(bc(sys_.bnd_points), dtype=float).reshape(sys_.bnd_points.shape[0], flat.shape[1])
        g_fix = np.asarray(bc(dom.coords[sys_.fixed]), dtype=float).reshape(sys_.fixed.size, flat.shape[1])
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    fix_val = np.zeros_like(flat)
    fix_val[sys_.fixed] = g_fix
    for c in range(flat.shape[1]):
        b = -flat[sys_.unknowns, c] * dom.h**2
        np.add.at(b, sys_.bnd_rows, sys_.bnd_weight * g_bnd[:, c])
        np.add.at(b, sys_.pin_rows, fix_val[sys_.pin_nodes, c])
        out[sys_.unknowns, c] = _cg(sys_.matrix, b, dom.N)
        out[sys_.fixed, c] = g_fix[:, c]
    if callable(bc):
        rest = dom.valid.copy()
        rest[sys_.unknowns] = False
        rest[sys_.fixed] = False
        if rest.any():
            out[rest] = np.asarray(bc(dom.coords[rest]), dtype=float).reshape(int(rest.sum()), flat.shape[1])
    return rhs.with_values(out.reshape(rhs.values.shape))


class HodgePotential(NamedTuple):
    xi: Field
    residual: float


def hodge_potential(A: Field) -> HodgePotential:
    """2-form potential whose codifferential is the divergence-free part of ``A``.

    Each component solves ``Laplacian(xi) = -dA`` with zero Dirichlet data
    (the minus sign is the negative-divergence convention of
    :func:`codifferential`).  ``residual`` is ``||d*xi - A||_L2``, the size of
    the curl-free part of ``A``, not an error.
    """
    if A.degree != 1:
        raise ValueError("hodge_potential needs a 1-form")
    dA = exterior_derivative(A)
    rhs = Field(A.domain, 0, (-dA.values).reshape(A.domain.n_nodes, 1, -1))
    sol = poisson_solve(rhs, "periodic" if A.domain.periodic else "dirichlet-zero")
    xi = Field(A.domain, 2, sol.values.reshape(dA.values.shape))
    return HodgePotential(xi, l2_norm(codifferential(xi) - A))
