"""Embedded target manifolds N in R^d with closed-form projections.

Every operation is batched over leading axes: ``z`` has shape ``(..., d)``
and matrices come back with shape ``(..., d, d)``.  Matrix manifolds are
flattened row-major, so ``z.reshape(..., k, k)`` recovers the matrix.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import Field, GridDomain

ON_MANIFOLD_TOL = 1e-8


class OffManifoldError(ValueError):
    def __init__(self, residual):
        super().__init__(f"point is off the manifold (residual {residual:.3e} > {ON_MANIFOLD_TOL})")
        self.residual = residual


def _skew_basis(k):
    out = []
    for a, b in itertools.combinations(range(k), 2):
        M = np.zeros((k, k))
        M[a, b], M[b, a] = -1.0, 1.0
        out.append(M)
    return np.array(out)


class TargetManifold:
    """Base class; subclasses supply projection and tangent-projector derivatives."""

    kind: str
    d: int
    n: int
    parallel_A = True
    homogeneous = True

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def params(self) -> dict:
        raise NotImplementedError

    # -- required per target ------------------------------------------------
    def project(self, z):
        raise NotImplementedError

    def _tangent_apply(self, z, v):
        """T(z) v for on-manifold z, broadcasting z (..., d) against v (..., d)."""
        raise NotImplementedError

    def _dtangent_apply(self, z, x, v):
        """(D_x T)(z) v, the derivative of the tangent projector along x."""
        raise NotImplementedError

    @property
    def generators(self) -> np.ndarray:
        """Killing generators as an array (K, d, d) of skew matrices."""
        raise NotImplementedError

    # -- generic -------------------------------------------------------------
    def residual(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.abs(self.project(z) - z).max(initial=0.0))

    def check_on_manifold(self, z):
        res = self.residual(z)
        if res > ON_MANIFOLD_TOL:
            raise OffManifoldError(res)

    def tangent_projector(self, z, check=True):
        z = np.asarray(z, dtype=float)
        if check:
            self.check_on_manifold(z)
        eye = np.eye(self.d)
        cols = self._tangent_apply(z[..., None, :], eye)
        return np.swapaxes(cols, -1, -2)

    def normal_projector(self, z, check=True):
        return np.eye(self.d) - self.tangent_projector(z, check)

    def gauss_reflection(self, z, check=True):
        """R = T - V = 2T - Id, an orthogonal symmetric involution."""
        return 2.0 * self.tangent_projector(z, check) - np.eye(self.d)

    def tangent(self, z, v):
        return self._tangent_apply(z, v)

    def normal(self, z, v):
        return v - self._tangent_apply(z, v)

    def second_fundamental_form(self, z, X, Y):
        """A(X^T, Y^T) = V (D_{X^T} T)(Y^T), normal-valued and symmetric."""
        Xt = self._tangent_apply(z, X)
        Yt = self._tangent_apply(z, Y)
        return self.normal(z, self._dtangent_apply(z, Xt, Yt))

    def dtangent_fd(self, z, x, step=1e-5):
        """Richardson-extrapolated central difference of T along x, shape (..., d, d)."""
        def central(eps):
            zp = self.project(z + eps * x)
            zm = self.project(z - eps * x)
            return (self.tangent_projector(zp, False) - self.tangent_projector(zm, False)) / (2 * eps)
        return (4.0 * central(step / 2) - central(step)) / 3.0

    def second_fundamental_form_fd(self, z, X, Y, step=1e-5):
        """Finite-difference fallback for :meth:`second_fundamental_form`."""
        Xt = self._tangent_apply(z, X)
        Yt = self._tangent_apply(z, Y)
        dT = self.dtangent_fd(z, Xt, step)
        return self.normal(z, np.einsum("...ij,...j->...i", dT, Yt))

    def killing_fields(self, z):
        """Killing fields M_j z at z, shape (..., K, d)."""
        return np.einsum("kij,...j->...ki", self.generators, np.asarray(z, dtype=float))

    @property
    def lipschitz_constant(self) -> float:
        """max_j of the operator norm of the generators."""
        return float(max(np.linalg.norm(M, 2) for M in self.generators))

    @property
    def n_generators(self) -> int:
        return len(self.generators)


@dataclass(frozen=True, eq=True)
class Sphere(TargetManifold):
    """Round unit sphere S^n in R^{n+1}."""

    n: int = 2
    kind = "Sphere"

    @property
    def d(self):
        return self.n + 1

    def params(self):
        return {"n": self.n}

    def project(self, z):
        z = np.asarray(z, dtype=float)
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(norm == 0.0):
            raise ValueError("cannot project the zero vector onto the sphere (|z| = 0)")
        return z / norm

    def _tangent_apply(self, z, v):
        return v - z * (z * v).sum(axis=-1, keepdims=True)

    def _dtangent_apply(self, z, x, v):
        return -(x * (z * v).sum(axis=-1, keepdims=True) + z * (x * v).sum(axis=-1, keepdims=True))

    def second_fundamental_form(self, z, X, Y):
        Xt = self._tangent_apply(z, X)
        Yt = self._tangent_apply(z, Y)
        return -(Xt * Yt).sum(axis=-1, keepdims=True) * z

    @property
    def generators(self):
        return _skew_basis(self.d)


@dataclass(frozen=True, eq=True)
class SpecialOrthogonal(TargetManifold):
    """SO(k) inside R^{k x k} with the Frobenius metric."""

    k: int = 3
    kind = "SpecialOrthogonal"

    @property
    def d(self):
        return self.k * self.k

    @property
    def n(self):
        return self.k * (self.k - 1) // 2

    def params(self):
        return {"k": self.k}

    def _mat(self, z):
        return np.asarray(z, dtype=float).reshape(*np.shape(z)[:-1], self.k, self.k)

    def project(self, z):
        """Polar factor by the scaled Newton iteration X <- (g X + X^{-T}/g)/2."""
        X = self._mat(z).copy()
        det = np.linalg.det(X)
        if np.any(det <= 1e-14):
            raise ValueError(f"polar factor undefined: min det = {float(np.min(det)):.3e} <= 0")
        for _ in range(100):
            Xinv_t = np.swapaxes(np.linalg.inv(X), -1, -2)
            g = (np.abs(np.linalg.det(Xinv_t)) / np.abs(np.linalg.det(X))) ** (1.0 / (2 * self.k))
            g = g[..., None, None]
            X_new = 0.5 * (g * X + Xinv_t / g)
            delta = np.abs(X_new - X).max(initial=0.0)
            X = X_new
            if delta <= 1e-14:
                break
        # one unscaled step removes the scaling residue
        X = 0.5 * (X + np.swapaxes(np.linalg.inv(X), -1, -2))
        return X.reshape(*np.shape(z))

    def _tangent_apply(self, z, v):
        U, V = np.broadcast_arrays(self._mat(z), self._mat(v))
        T = 0.5 * (V - U @ np.swapaxes(V, -1, -2) @ U)
        return T.reshape(*T.shape[:-2], self.d)

    def _dtangent_apply(self, z, x, v):
        U, X, V = np.broadcast_arrays(self._mat(z), self._mat(x), self._mat(v))
        Vt = np.swapaxes(V, -1, -2)
        out = -0.5 * (X @ Vt @ U + U @ Vt @ X)
        return out.reshape(*out.shape[:-2], self.d)

    @property
    def generators(self):
        eye = np.eye(self.k)
        left = [np.kron(W, eye) for W in _skew_basis(self.k)]
        right = [np.kron(eye, W.T) for W in _skew_basis(self.k)]
        return np.array(left + right)


@dataclass(frozen=True, eq=True)
class Grassmann(TargetManifold):
    """G(n, d0) as rank-n orthogonal projection matrices in R^{d0 x d0}."""

    rank: int = 1
    d0: int = 2
    kind = "Grassmann"

    @property
    def d(self):
        return self.d0 * self.d0

    @property
    def n(self):
        return self.rank * (self.d0 - self.rank)

    def params(self):
        return {"n": self.rank, "d0": self.d0, "metric": "frobenius-projection"}

    def _mat(self, z):
        return np.asarray(z, dtype=float).reshape(*np.shape(z)[:-1], self.d0, self.d0)

    def project(self, z):
        S = self._mat(z)
        S = 0.5 * (S + np.swapaxes(S, -1, -2))
        w, V = np.linalg.eigh(S)
        gap = w[..., self.d0 - self.rank] - w[..., self.d0 - self.rank - 1]
        if np.any(gap <= 1e-12):
            raise ValueError(f"no spectral gap at rank {self.rank}: min gap {float(np.min(gap)):.3e}")
        top = V[..., self.d0 - self.rank:]
        P = top @ np.swapaxes(top, -1, -2)
        P = 0.5 * (P + np.swapaxes(P, -1, -2))
        return P.reshape(*np.shape(z))

    def _tangent_apply(self, z, v):
        P, V = np.broadcast_arrays(self._mat(z), self._mat(v))
        S = 0.5 * (V + np.swapaxes(V, -1, -2))
        T = P @ S + S @ P - 2.0 * P @ S @ P
        return T.reshape(*T.shape[:-2], self.d)

    def _dtangent_apply(self, z, x, v):
        P, X, V = np.broadcast_arrays(self._mat(z), self._mat(x), self._mat(v))
        S = 0.5 * (V + np.swapaxes(V, -1, -2))
        out = X @ S + S @ X - 2.0 * (X @ S @ P + P @ S @ X)
        return out.reshape(*out.shape[:-2], self.d)

    @property
    def generators(self):
        eye = np.eye(self.d0)
        return np.array([np.kron(W, eye) + np.kron(eye, W) for W in _skew_basis(self.d0)])


def make_target(kind: str, **params) -> TargetManifold:
    kind_l = kind.lower()
    if kind_l == "sphere":
        return Sphere(int(params.get("n", 2)))
    if kind_l in ("specialorthogonal", "so"):
        return SpecialOrthogonal(int(params.get("k", 3)))
    if kind_l == "grassmann":
        return Grassmann(int(params.get("n", 1)), int(params.get("d0", 2)))
    raise ValueError(f"unknown target kind {kind!r}")


class MapField:
    """A degree-0 R^d-valued field with values on a target manifold."""

    def __init__(self, u: Field, target: TargetManifold, project=True):
        if u.degree != 0 or u.value_shape != (target.d,):
            raise ValueError(f"map needs a degree-0 field with values in R^{target.d}")
        dom = u.domain
        vals = u.values.copy()
        if project:
            vals[dom.valid, 0] = target.project(vals[dom.valid, 0])
        self.u = Field(dom, 0, vals)
        self.target = target
        self.residual = target.residual(self.u.values[dom.valid, 0])
        if self.residual > ON_MANIFOLD_TOL:
            raise OffManifoldError(self.residual)

    @classmethod
    def from_function(cls, domain: GridDomain, target: TargetManifold, fn):
        return cls(Field.from_function(domain, fn), target)

    @property
    def domain(self) -> GridDomain:
        return self.u.domain

    @property
    def values(self) -> np.ndarray:
        """Node values, shape (n_nodes, d)."""
        return self.u.values[:, 0]

    def field_of(self, fn) -> Field:
        """Apply a nodewise function of z to valid nodes and wrap as a 0-form."""
        dom = self.domain
        out = np.asarray(fn(self.values[dom.valid]))
        vals = np.zeros((dom.n_nodes, *out.shape[1:]))
        vals[dom.valid] = out
        return Field.from_nodes(dom, vals)

    def tangent_projector_field(self) -> Field:
        return self.field_of(lambda z: self.target.tangent_projector(z, check=False))

    def reflection_field(self) -> Field:
        return self.field_of(lambda z: self.target.gauss_reflection(z, check=False))


def killing_flow(target: TargetManifold, j: int, t: float, z):
    """expm(t M_j) z, the isometry flow of generator j."""
    return np.asarray(z) @ scipy.linalg.expm(t * target.generators[j]).T
