"""Coulomb gauge for a connection form, the Q = P^T R P test and moving frames.

The gauge is found variationally: minimise

    E(P) = sum_nodes h^m sum_i |P^T D_i P + P^T omega_i P|^2

over rotation fields P.  The gradient below is the exact gradient of this
discrete energy (it approximates 2 d*A in the interior); the search direction
is the Gauss-Newton step obtained by preconditioning with the discrete
Dirichlet operator, which keeps the iteration count independent of N.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from .connection import ConnectionForm
from .grid import Field, codifferential, exterior_derivative, hodge_potential, l2_norm
from .targets import MapField

Q_THRESHOLD = 0.05
ORTHO_TOL = 1e-10


def _T(a):
    return np.swapaxes(a, -1, -2)


def _skew(a):
    return 0.5 * (a - _T(a))


def polar_orthonormalize(P: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix at each node (U V^T from the SVD)."""
    U, _, Vt = np.linalg.svd(P)
    return U @ Vt


@dataclass
class GaugeSolution:
    """Rotation field P with the gauged connection and its Hodge potential.

    Attributes
    ----------
    P : Field
        Matrix 0-form with values in SO(d) on valid nodes.
    A_gauged : Field
        P^T dP + P^T omega P.
    xi : Field
        Matrix 2-form with zero Dirichlet data and d* xi close to A_gauged.
    energy_history : list of float
        Gauge energy after every accepted step (first entry at P = Id).
    coulomb_residual : float
        L2 norm of the discrete energy gradient G, which approximates d*A.
    """

    P: Field
    A_gauged: Field
    xi: Field
    omega: ConnectionForm
    energy_history: list
    coulomb_residual: float
    divergence_residual: float
    hodge_residual: float
    orthogonality_residual: float
    iterations: int
    converged: bool
    reason: str
    omega_l2: float
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "energy_initial": self.energy_history[0],
            "energy_final": self.energy_history[-1],
            "coulomb_residual": self.coulomb_residual,
            "divergence_residual": self.divergence_residual,
            "hodge_residual": self.hodge_residual,
            "orthogonality_residual": self.orthogonality_residual,
            "omega_l2": self.omega_l2,
        }


class _GaugeProblem:
    """Energy, gradient and preconditioner on the valid nodes of a domain."""

    def __init__(self, conn: ConnectionForm, mu: float):
        dom = conn.domain
        self.dom = dom
        self.sel = np.flatnonzero(dom.valid)
        n = self.sel.size
        self.w = dom.cell_volume
        self.D = [Dm[self.sel][:, self.sel].tocsr() for Dm in dom.derivative_matrices]
        self.DT = [Di.T.tocsr() for Di in self.D]
        self.omega = conn.omega.values[self.sel]
        self.d = conn.dim
        # Gauss-Newton operator 2 sum_i D_i^T D_i + mu, in units of the node weight
        H = sum(DTi @ Di for DTi, Di in zip(self.DT, self.D)) * 2.0 + mu * sp.identity(n)
        self.H = H.tocsc()
        # direct factorisation is cheap in 2-d; 3-d fill-in makes CG the better choice
        self._solve = spla.factorized(self.H) if dom.m == 2 and n <= 60000 else None
        self.cg_rtol = 1e-8

    def _dP(self, P):
        flat = P.reshape(P.shape[0], -1)
        return np.stack([(Di @ flat).reshape(P.shape) for Di in self.D], axis=1)

    def connection(self, P):
        Pt = _T(P)[:, None]
        return Pt @ self._dP(P) + Pt @ self.omega @ P[:, None]

    def energy(self, A):
        return float((A**2).sum() * self.w)

    def energy_change(self, A_old, A_new):
        """E(new) - E(old) as sum (a - b)(a + b), free of cancellation."""
        return float(((A_new - A_old) * (A_new + A_old)).sum() * self.w)

    def gradient(self, P, A):
        """G with dE = sum_nodes w <2G, eta> for P -> P expm(eta)."""
        WPA = (P[:, None] @ A) * self.w
        g = np.zeros_like(P)
        for i, DTi in enumerate(self.DT):
            g += _T(P) @ (DTi @ WPA[:, i].reshape(P.shape[0], -1)).reshape(P.shape)
            B = _T(P) @ self.omega[:, i] @ P
            g += self.w * _T(B) @ A[:, i]
        return _skew(g) / self.w

    def direction(self, G):
        """Solve the Gauss-Newton system for the independent (upper) entries of G."""
        d = G.shape[1]
        eta = np.zeros_like(G)
        for a in range(d):
            for b in range(a + 1, d):
                rhs = 2.0 * G[:, a, b]
                if not np.any(rhs):
                    continue
                if self._solve is not None:
                    x = self._solve(rhs)
                else:
                    x, _ = spla.cg(self.H, rhs, rtol=self.cg_rtol, atol=0.0, maxiter=50 * self.dom.N**2)
                eta[:, a, b] = x
                eta[:, b, a] = -x
        return eta

    def l2(self, X):
        return float(np.sqrt((X**2).sum() * self.w))


class CoulombGauge(BaseEstimator):
    """Estimator computing the Coulomb gauge of a connection form.

    Parameters
    ----------
    tol : float
        Stop when ``||G||_L2 <= tol * max(1, ||omega||_L2)``.
    max_iters : int
        Iteration cap; hitting it returns a non-converged solution.
    tau0 : float
        Initial step length of every line search.
    backtrack : float
        Step reduction factor on failed decrease.
    min_step : float
        Line-search floor; below it the run stops as non-converged.
    mu : float
        Zeroth-order shift of the Gauss-Newton preconditioner.
    precondition : bool
        ``False`` uses the plain gradient direction (slow, for comparison).
    """

    def __init__(self, tol=1e-8, max_iters=5000, tau0=1.0, backtrack=0.5, min_step=1e-12,
                 mu=1.0, precondition=True):
        self.tol = tol
        self.max_iters = max_iters
        self.tau0 = tau0
        self.backtrack = backtrack
        self.min_step = min_step
        self.mu = mu
        self.precondition = precondition

    def _validate(self, conn):
        if not isinstance(conn, ConnectionForm):
            raise TypeError("CoulombGauge.fit expects a ConnectionForm")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        skew = conn.skewness
        if skew > 1e-10 * max(1.0, float(np.abs(conn.omega.values).max(initial=0.0))):
            raise ValueError(f"connection form is not skew (residual {skew:.3e})")

    def fit(self, conn: ConnectionForm, P0: Field | None = None):
        self._validate(conn)
        prob = _GaugeProblem(conn, self.mu)
        dom = conn.domain
        n, d = prob.sel.size, prob.d
        P = np.broadcast_to(np.eye(d), (n, d, d)).copy() if P0 is None else P0.nodal[prob.sel].copy()
        omega_l2 = l2_norm(conn.omega)
        target = self.tol * max(1.0, omega_l2)

        A = prob.connection(P)
        E = prob.energy(A)
        history = [E]
        it, reason = 0, "max_iters"
        G = prob.gradient(P, A)
        gnorm = prob.l2(G)
        while True:
            if gnorm <= target:
                reason = "converged"
                break
            if it >= self.max_iters:
                break
            eta = prob.direction(G) if self.precondition else G
            tau = self.tau0
            accepted = False
            while tau >= self.min_step:
                P_new = polar_orthonormalize(P @ scipy.linalg.expm(-tau * eta))
                A_new = prob.connection(P_new)
                dE = prob.energy_change(A, A_new)
                if dE < 0.0:
                    accepted = True
                    break
                tau *= self.backtrack
            if not accepted:
                reason = "line_search_failed"
                break
            # accumulate increments so the recorded history is monotone exactly
            P, A, E = P_new, A_new, E + dE
            history.append(E)
            it += 1
            G = prob.gradient(P, A)
            gnorm = prob.l2(G)

        Pf = np.zeros((dom.n_nodes, d, d))
        Pf[prob.sel] = P
        Af = np.zeros((dom.n_nodes, dom.m, d, d))
        Af[prob.sel] = A
        A_field = Field(dom, 1, Af)
        hp = hodge_potential(A_field)
        ortho = float(np.abs(_T(P) @ P - np.eye(d)).max(initial=0.0))
        div = l2_norm(codifferential(A_field), dom.core(2))
        self.solution_ = GaugeSolution(
            P=Field.from_nodes(dom, Pf), A_gauged=A_field, xi=hp.xi, omega=conn,
            energy_history=history, coulomb_residual=gnorm, divergence_residual=div,
            hodge_residual=hp.residual, orthogonality_residual=ortho, iterations=it,
            converged=reason == "converged", reason=reason, omega_l2=omega_l2)
        return self


def coulomb_gauge(conn: ConnectionForm, tol: float = 1e-8, max_iters: int = 5000, **kw) -> GaugeSolution:
    """Functional form of :class:`CoulombGauge`."""
    return CoulombGauge(tol=tol, max_iters=max_iters, **kw).fit(conn).solution_


def gauge_energy(conn: ConnectionForm, P: Field) -> float:
    """E(P) as minimised by :class:`CoulombGauge`."""
    prob = _GaugeProblem.__new__(_GaugeProblem)
    dom = conn.domain
    prob.sel = np.flatnonzero(dom.valid)
    prob.w = dom.cell_volume
    prob.D = [Dm[prob.sel][:, prob.sel].tocsr() for Dm in dom.derivative_matrices]
    prob.omega = conn.omega.values[prob.sel]
    return prob.energy(prob.connection(P.nodal[prob.sel]))


def gauge_gradient(conn: ConnectionForm, P: Field) -> Field:
    """The gradient field G used by the descent, as a matrix 0-form."""
    prob = _GaugeProblem(conn, 1.0)
    Pv = P.nodal[prob.sel]
    G = prob.gradient(Pv, prob.connection(Pv))
    out = np.zeros((conn.domain.n_nodes, prob.d, prob.d))
    out[prob.sel] = G
    return Field.from_nodes(conn.domain, out)


def _commutator(Q, X):
    return Q @ X - X @ Q


def q_field(gauge: GaugeSolution, R_field: Field) -> dict:
    """Q = P^T R P and the residual of dQ = [Q, d*xi].

    Returns ``dQ_l2``, ``sup_deviation`` (worst-node Frobenius distance to the
    domain mean), ``structure_residual`` and the exact-algebra residual
    ``gauged_residual`` = ||dQ - [Q, A_gauged]||.
    """
    dom = gauge.P.domain
    if R_field.domain is not dom or R_field.degree != 0 or R_field.value_shape != gauge.P.value_shape:
        raise ValueError("R field must be a matrix 0-form matching P")
    P = gauge.P.nodal
    Q = _T(P) @ R_field.nodal @ P
    Qf = Field.from_nodes(dom, Q)
    dQ = exterior_derivative(Qf)
    sel = dom.valid
    Qbar = Q[sel].mean(axis=0)
    dev = float(np.sqrt(((Q[sel] - Qbar) ** 2).sum(axis=(1, 2))).max(initial=0.0))
    dxi = codifferential(gauge.xi).values
    comm = _commutator(Q[:, None], dxi)
    commA = _commutator(Q[:, None], gauge.A_gauged.values)
    return {
        "Q": Qf,
        "dQ_l2": l2_norm(dQ),
        "sup_deviation": dev,
        "structure_residual": l2_norm(dQ.with_values(dQ.values - comm)),
        "gauged_residual": l2_norm(dQ.with_values(dQ.values - commA)),
    }


class FrameRefusal(RuntimeError):
    """Raised when frames cannot be adapted to the bundle."""

    def __init__(self, message, deviation):
        super().__init__(message)
        self.deviation = deviation


@dataclass
class FramePair:
    tangent: list
    normal: list
    orthonormality_residual: float
    tangency_residual: float
    tangency_residual_max: float
    coulomb_residuals: np.ndarray
    base_node: int
    q_deviation: float

    def summary(self) -> dict:
        return {
            "orthonormality_residual": self.orthonormality_residual,
            "tangency_residual": self.tangency_residual,
            "tangency_residual_max": self.tangency_residual_max,
            "coulomb_residual_max": float(np.max(self.coulomb_residuals, initial=0.0)),
            "base_node": self.base_node,
            "q_deviation": self.q_deviation,
        }


def _eig_basis(M, top: int):
    """Orthonormal eigenvectors of symmetric M, top or bottom, with fixed signs."""
    w, V = np.linalg.eigh(M)
    V = V[:, -top:] if top > 0 else V[:, :-top or None]
    for c in range(V.shape[1]):
        j = int(np.argmax(np.abs(V[:, c])))
        if V[j, c] < 0:
            V[:, c] = -V[:, c]
    return V


def _gram_schmidt(vecs):
    """Nodewise Gram-Schmidt (two passes) over a list of (n, d) arrays, in list order."""
    out = []
    for v in vecs:
        v = v.copy()
        for _ in range(2):
            for e in out:
                v -= (v * e).sum(axis=1, keepdims=True) * e
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        out.append(np.divide(v, nrm, out=np.zeros_like(v), where=nrm > 0))
    return out


def _bundle(u, dom):
    """Tangent projectors on valid nodes, the reflection field and the rank."""
    if isinstance(u, MapField):
        T = u.target.tangent_projector(u.values[dom.valid], check=False)
        return T, u.reflection_field(), u.target.n
    if isinstance(u, Field) and u.degree == 0 and u.value_kind == "matrix":
        T = u.nodal[dom.valid]
        rank = int(round(float(np.trace(T[0]))))
        R = Field.from_nodes(dom, 2.0 * u.nodal - np.where(dom.valid[:, None, None], np.eye(T.shape[-1]), 0.0))
        return T, R, rank
    raise TypeError("frames need a MapField or a projector field")


def extract_frames(gauge: GaugeSolution, u, base_node: int | None = None,
                   threshold: float = Q_THRESHOLD, base_frame=None, require_converged=True,
                   region=None) -> FramePair:
    """Tangent and normal frames e_i = P P(x0)^T E_i along u.

    ``u`` is a :class:`MapField` or a field of orthogonal projections (the
    bundle is then the image of the projection).  Refuses with
    ``FrameRefusal`` when the Q-deviation exceeds ``threshold``, then when
    the gauge did not converge (unless ``require_converged`` is false).
    ``base_frame`` optionally fixes (E, N) as column matrices.  Coulomb
    residuals are measured on ``region`` (default: nodes two cells clear of
    the boundary layer, where the one-sided stencils do not reach).
    """
    dom = gauge.P.domain
    T, R_field, rank = _bundle(u, dom)
    q = q_field(gauge, R_field)
    if q["sup_deviation"] > threshold:
        raise FrameRefusal(
            f"Q deviates from a constant by {q['sup_deviation']:.3e} > {threshold}: "
            "the frame cannot be adapted to the tangent bundle", q["sup_deviation"])
    if require_converged and not gauge.converged:
        raise FrameRefusal(f"gauge did not converge ({gauge.reason})", q["sup_deviation"])
    region = dom.core(2) if region is None else region
    sel = dom.valid
    x0 = dom.nearest_node(np.zeros(dom.m)) if base_node is None else int(base_node)
    if not sel[x0]:
        raise ValueError("base node must be a valid node")
    dim = T.shape[-1]
    if base_frame is None:
        T0 = T[np.searchsorted(np.flatnonzero(sel), x0)]
        E = _eig_basis(T0, rank)
        Nrm = _eig_basis(T0, -(dim - rank))
    else:
        E, Nrm = base_frame
    P = gauge.P.nodal
    rot = P[sel] @ P[x0].T
    V = np.eye(dim) - T
    raw_e = [rot @ E[:, i] for i in range(E.shape[1])]
    raw_n = [rot @ Nrm[:, j] for j in range(Nrm.shape[1])]
    tang = np.sqrt(sum((np.einsum("nab,nb->na", V, e) ** 2).sum(axis=1) for e in raw_e))
    tangency_l2 = float(np.sqrt((tang**2).sum() * dom.cell_volume))
    es = _gram_schmidt([np.einsum("nab,nb->na", T, e) for e in raw_e])
    ns = _gram_schmidt([np.einsum("nab,nb->na", V, v) for v in raw_n])
    allv = np.stack(es + ns, axis=1)
    gram = allv @ _T(allv)
    ortho = float(np.abs(gram - np.eye(allv.shape[1])).max(initial=0.0))

    def as_field(v):
        full = np.zeros((dom.n_nodes, dim))
        full[sel] = v
        return Field.from_nodes(dom, full)

    e_fields = [as_field(e) for e in es]
    n_fields = [as_field(v) for v in ns]
    de = [exterior_derivative(e) for e in e_fields]
    k = len(e_fields)
    coul = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            cur = np.einsum("na,nia->ni", e_fields[i].nodal, de[j].values)
            coul[i, j] = l2_norm(codifferential(Field(dom, 1, cur)), region)
    return FramePair(e_fields, n_fields, ortho, tangency_l2, float(tang.max(initial=0.0)), coul, x0,
                     q["sup_deviation"])
