"""The so(d)-valued connection omega along a map and its structure identities.

Three discrete constructions are provided (from the second fundamental
form, from the reflection field R = 2T - Id, from a projector field); in the
continuum they agree, so their discrete gaps measure consistency.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (Field, codifferential, exterior_derivative, laplacian, l2_norm,
                   wedge)
from .targets import MapField

SKEW_TOL = 1e-10
PROJECTOR_TOL = 1e-8


@dataclass
class ConnectionForm:
    """Matrix-valued 1-form omega with a provenance tag."""

    omega: Field
    provenance: str

    def __post_init__(self):
        if self.omega.degree != 1 or self.omega.value_kind != "matrix":
            raise ValueError("a connection form is a matrix-valued 1-form")

    @property
    def skewness(self) -> float:
        return self.omega.skewness()

    @property
    def domain(self):
        return self.omega.domain

    @property
    def dim(self) -> int:
        return self.omega.value_shape[0]


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _omega_action(target, z, X):
    """Matrix of v -> -A(v, X) + <A(X, .)#, v> at each node.

    ``Acols[..., a, b] = A(e_a, X)_b``; the matrix is ``Acols - Acols^T``.
    """
    eye = np.eye(target.d)
    Acols = target.second_fundamental_form(z[..., None, :], eye, X[..., None, :])
    return Acols - _swap(Acols)


def compute_omega_from_A(u: MapField) -> ConnectionForm:
    dom = u.domain
    du = exterior_derivative(u.u)
    sel = dom.valid
    z = u.values[sel]
    out = np.zeros((dom.n_nodes, dom.m, u.target.d, u.target.d))
    for i in range(dom.m):
        out[sel, i] = _omega_action(u.target, z, du.values[sel, i])
    return ConnectionForm(Field(dom, 1, out), "from_A")


def compute_omega_from_reflection(u: MapField) -> ConnectionForm:
    """omega = R^{-1} dR / 2 with R = 2T - Id (so R^{-1} = R)."""
    R = u.reflection_field()
    dR = exterior_derivative(R)
    out = 0.5 * np.einsum("nab,nibc->niac", R.nodal, dR.values)
    return ConnectionForm(Field(u.domain, 1, out), "from_reflection")


def projector_defect(P_field: Field) -> float:
    """Worst-node |P^2 - P| + |P^T - P| on valid nodes."""
    P = P_field.nodal[P_field.domain.valid]
    return float(max(np.abs(P @ P - P).max(initial=0.0), np.abs(P - _swap(P)).max(initial=0.0)))


def _check_projector(P_field: Field):
    if P_field.degree != 0 or P_field.value_kind != "matrix":
        raise ValueError("projector field must be a matrix-valued 0-form")
    defect = projector_defect(P_field)
    if defect > PROJECTOR_TOL:
        raise ValueError(f"field is not a projector: worst-node idempotence residual {defect:.3e}")


def compute_omega_from_projector(P_field: Field, provenance="from_projector") -> ConnectionForm:
    """omega = P dP - dP P for a field of symmetric idempotents."""
    _check_projector(P_field)
    P = P_field.nodal
    dP = exterior_derivative(P_field).values
    out = np.einsum("nab,nibc->niac", P, dP) - np.einsum("niab,nbc->niac", dP, P)
    return ConnectionForm(Field(P_field.domain, 1, out), provenance)


def check_projector_identities(P_field: Field, region=None) -> dict:
    """Residuals of T dT T = 0, V dT V = 0 and dT = dT T + T dT.

    Returns max-node and L2 values for each identity; all vanish in the
    continuum, so they are discretization-limited here.
    """
    _check_projector(P_field)
    dom = P_field.domain
    region = dom.valid if region is None else region
    T = P_field.nodal
    V = np.eye(T.shape[-1]) - T
    dT = exterior_derivative(P_field).values
    TdT = np.einsum("nab,nibc->niac", T, dT)
    dTT = np.einsum("niab,nbc->niac", dT, T)
    res = {
        "TdTT": np.einsum("niab,nbc->niac", TdT, T),
        "VdTV": np.einsum("nab,nibc,ncd->niad", V, dT, V),
        "dT_split": dT - dTT - TdT,
    }
    scale = l2_norm(Field(dom, 1, dT), region) or 1.0
    out = {}
    for name, arr in res.items():
        f = Field(dom, 1, arr)
        out[name] = {
            "max": float(f.pointwise_norm()[region].max(initial=0.0)),
            "l2": l2_norm(f, region),
            "relative_l2": l2_norm(f, region) / scale,
        }
    return out


def covariant_derivative(E: Field, conn: ConnectionForm) -> Field:
    """nabla E = dE + [omega, E] for a matrix-valued 0-form E."""
    if E.degree != 0 or E.value_kind != "matrix" or E.value_shape[0] != conn.dim:
        raise ValueError("covariant derivative needs a matrix 0-form matching omega")
    dE = exterior_derivative(E).values
    w = conn.omega.values
    Ev = E.nodal
    out = dE + np.einsum("niab,nbc->niac", w, Ev) - np.einsum("nab,nibc->niac", Ev, w)
    return Field(E.domain, 1, out)


def curvature(conn: ConnectionForm, scale: float = 1.0) -> Field:
    """F = s d(omega) + s^2 omega ^ omega for the connection d + s omega."""
    if conn.domain.m < 2:
        raise ValueError("curvature needs m >= 2")
    dw = exterior_derivative(conn.omega)
    ww = wedge(conn.omega, conn.omega, product="matmul")
    return Field(conn.domain, 2, scale * dw.values + scale * scale * ww.values)


def gauge_transform(conn: ConnectionForm, S: Field) -> ConnectionForm:
    """S^{-1} dS + S^{-1} omega S for an orthogonal matrix field S."""
    Sv = S.nodal
    St = _swap(Sv)
    dS = exterior_derivative(S).values
    out = np.einsum("nab,nibc->niac", St, dS) + np.einsum("nab,nibc,ncd->niad", St, conn.omega.values, Sv)
    return ConnectionForm(Field(conn.domain, 1, out), conn.provenance + "+gauge")


def tension(u: MapField) -> Field:
    """tau(u) = T(u) Laplacian(u) on interior nodes."""
    lap = laplacian(u.u).nodal
    T = u.tangent_projector_field().nodal
    return Field.from_nodes(u.domain, np.einsum("nab,nb->na", T, lap))


def compute_divergence_omega(u: MapField, tension_field: Field | None = None,
                             conn: ConnectionForm | None = None, region=None) -> dict:
    """Compare d*omega with -Omega(tau), Omega(X) v = -A(v, X) + <A(X,.)#, v>.

    Valid for targets with parallel second fundamental form, where the
    covariant-derivative-of-A terms drop out.
    """
    if not u.target.parallel_A:
        raise ValueError("divergence identity implemented only for parallel-A targets")
    dom = u.domain
    region = dom.interior if region is None else region
    tau = tension(u) if tension_field is None else tension_field
    conn = compute_omega_from_A(u) if conn is None else conn
    lhs = codifferential(conn.omega)
    rhs_vals = np.zeros_like(lhs.values)
    sel = dom.valid
    rhs_vals[sel, 0] = -_omega_action(u.target, u.values[sel], tau.nodal[sel])
    rhs = Field(dom, 0, rhs_vals)
    mismatch = l2_norm(lhs - rhs, region)
    lhs_norm = l2_norm(lhs, region)
    return {
        "div_omega_l2": lhs_norm,
        "rhs_l2": l2_norm(rhs, region),
        "mismatch_l2": mismatch,
        "relative_mismatch": mismatch / max(lhs_norm, 1e-300),
    }


def omega_distance(a: ConnectionForm, b: ConnectionForm, region=None) -> float:
    """Relative L2 distance ||a - b|| / ||a||."""
    region = a.domain.valid if region is None else region
    den = l2_norm(a.omega, region)
    return l2_norm(a.omega - b.omega, region) / den if den else l2_norm(b.omega, region)


def identity_report(name: str, N: int, residual: float, order: float | None = None) -> dict:
    return {"identity": name, "N": N, "residual": residual, "order": order}


def convergence_order(coarse: float, fine: float) -> float:
    if fine <= 0 or coarse <= 0:
        return float("inf")
    return float(np.log2(coarse / fine))
