"""Harmonic-map heat flow, Noether currents and regularity experiments."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from .grid import Field, GridDomain, codifferential, exterior_derivative, l2_norm, poisson_solve
from .norms import BallFamily, bmo_seminorm, lp_norm
from .targets import MapField, Sphere, TargetManifold


def edge_energy(u: MapField) -> float:
    """Dirichlet energy 1/2 sum_edges |u_head - u_tail|^2 h^{m-2}.

    Its gradient at an interior node is exactly -h^m times the compact
    Laplacian, so the flow below is a gradient flow of this quantity.
    """
    tail, head = u.domain.edges
    diff = u.values[head] - u.values[tail]
    return float(0.5 * (diff**2).sum() * u.domain.h ** (u.domain.m - 2))


def edge_energy_change(u_old: MapField, u_new: MapField) -> float:
    """E(u_new) - E(u_old) summed edgewise as (a - b).(a + b), free of cancellation."""
    tail, head = u_old.domain.edges
    a = u_new.values[head] - u_new.values[tail]
    b = u_old.values[head] - u_old.values[tail]
    return float(0.5 * ((a - b) * (a + b)).sum() * u_old.domain.h ** (u_old.domain.m - 2))


def tension_residual(u: MapField) -> float:
    """||T(u) Laplacian(u)||_L2 over interior nodes."""
    dom = u.domain
    I = dom.interior
    lap = dom.laplacian_matrix @ u.values
    t = u.target.tangent(u.values[I], lap[I])
    return float(np.sqrt((t**2).sum() * dom.cell_volume))


@dataclass
class FlowState:
    u: MapField
    steps: int
    tau: float
    residual_history: list
    energy_history: list
    converged: bool
    reason: str
    rejected: int = 0

    def summary(self) -> dict:
        return {"steps": self.steps, "tau": self.tau, "converged": self.converged,
                "reason": self.reason, "rejected": self.rejected,
                "residual": self.residual_history[-1], "energy": self.energy_history[-1]}


class HarmonicMapFlow(BaseEstimator):
    """Dirichlet harmonic-map heat flow by projection.

    Parameters
    ----------
    tau : float or None
        Initial step.  ``None`` picks h^2/(2m) for the explicit scheme and
        1.0 for the implicit one.
    tol : float
        Stop when the tangential Laplacian residual falls below ``tol``.
    max_steps : int
        Cap on accepted steps.
    scheme : {"explicit", "implicit"}
        ``explicit`` is ``u <- project(u + tau Lap u)``.  ``implicit`` takes
        the tangent step v solving ``(I/tau - T Lap T) v = T Lap u`` before
        projecting; it has the same fixed points and no step restriction.
    tau_min : float
        Floor for step halving.
    grow : float
        Step growth after an accepted implicit step (1 disables it).
    tau_max : float
        Ceiling for implicit step growth.
    """

    def __init__(self, tau=None, tol=1e-8, max_steps=200000, scheme="implicit", tau_min=1e-8,
                 grow=2.0, tau_max=1e6, cg_rtol=1e-6):
        self.tau = tau
        self.tol = tol
        self.max_steps = max_steps
        self.scheme = scheme
        self.tau_min = tau_min
        self.grow = grow
        self.tau_max = tau_max
        self.cg_rtol = cg_rtol

    def _validate(self, u0):
        if not isinstance(u0, MapField):
            raise TypeError("HarmonicMapFlow.fit expects a MapField")
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def _implicit_step(self, target, z, lapI, L_II, tau):
        n, d = z.shape
        T = target.tangent_projector(z, check=False)
        rhs = np.einsum("nab,nb->na", T, lapI).ravel()

        def apply(v):
            v = np.einsum("nab,nb->na", T, v.reshape(n, d))
            w = v / tau - np.einsum("nab,nb->na", T, L_II @ v)
            return w.ravel()

        K = spla.LinearOperator((n * d, n * d), matvec=apply, dtype=float)
        v, _ = spla.cg(K, rhs, rtol=self.cg_rtol, atol=0.0, maxiter=20 * L_II.shape[0])
        return z + v.reshape(n, d)

    def fit(self, u0: MapField):
        self._validate(u0)
        dom, target = u0.domain, u0.target
        I = np.flatnonzero(dom.interior)
        L = dom.laplacian_matrix
        L_II = L[I][:, I].tocsr()
        tau = self.tau
        if tau is None:
            tau = dom.h**2 / (2 * dom.m) if self.scheme == "explicit" else 1.0
        u = u0
        E = edge_energy(u)
        res = tension_residual(u)
        energies, residuals = [E], [res]
        steps, rejected, reason = 0, 0, "max_steps"
        while True:
            if res <= self.tol:
                reason = "converged"
                break
            if steps >= self.max_steps:
                break
            vals = u.values
            lapI = (L @ vals)[I]
            accepted = False
            while tau >= self.tau_min:
                if self.scheme == "explicit":
                    trial = vals[I] + tau * lapI
                else:
                    trial = self._implicit_step(target, vals[I], lapI, L_II, tau)
                new = u.u.values.copy()
                new[I, 0] = target.project(trial)
                cand = MapField(Field(dom, 0, new), target, project=False)
                dE = edge_energy_change(u, cand)
                if dE <= 0.0:
                    accepted = True
                    break
                tau *= 0.5
                rejected += 1
            if not accepted:
                reason = "tau_floor"
                break
            # the history accumulates exact-sign increments, so it is monotone as recorded
            u, E = cand, E + dE
            res = tension_residual(u)
            energies.append(E)
            residuals.append(res)
            steps += 1
            if self.scheme == "implicit":
                tau = min(tau * self.grow, self.tau_max)
        self.state_ = FlowState(u, steps, tau, residuals, energies, reason == "converged", reason, rejected)
        return self


def heat_flow(u0: MapField, tau=None, tol=1e-8, max_steps=200000, **kw) -> FlowState:
    """Functional form of :class:`HarmonicMapFlow`."""
    return HarmonicMapFlow(tau=tau, tol=tol, max_steps=max_steps, **kw).fit(u0).state_


def harmonic_extension(domain: GridDomain, target: TargetManifold, g) -> MapField:
    """Project the componentwise harmonic extension of boundary data ``g``."""
    zero = Field.zeros(domain, 0, (target.d,))
    ext = poisson_solve(zero, bc=g)
    return MapField(ext, target)


# -- Noether currents --------------------------------------------------------

@dataclass
class NoetherCurrents:
    currents: list
    divergence_residuals: np.ndarray
    tangential_residuals: np.ndarray
    bound_ratio: float
    lipschitz: float

    def summary(self) -> dict:
        return {"max_divergence": float(self.divergence_residuals.max(initial=0.0)),
                "max_tangential": float(self.tangential_residuals.max(initial=0.0)),
                "bound_ratio": self.bound_ratio, "lipschitz": self.lipschitz,
                "n_currents": len(self.currents)}


def noether_currents(u: MapField, region=None) -> NoetherCurrents:
    """X_j = <M_j u, du> for every Killing generator M_j.

    ``tangential_residuals[j]`` is ||<M_j u, T(u) Lap u>||, which the
    divergence of X_j tracks up to discretisation error.
    """
    target = u.target
    if not target.homogeneous:
        raise ValueError("Noether currents need a homogeneous target")
    dom = u.domain
    region = dom.interior if region is None else region
    du = exterior_derivative(u.u)
    Mu = target.killing_fields(u.values)  # (n, K, d)
    lap = dom.laplacian_matrix @ u.values
    tlap = np.zeros_like(lap)
    I = dom.interior
    tlap[I] = target.tangent(u.values[I], lap[I])
    dun = du.pointwise_norm()
    currents, div, tang = [], [], []
    ratio = 0.0
    for j in range(target.n_generators):
        X = Field(dom, 1, np.einsum("na,nia->ni", Mu[:, j], du.values))
        currents.append(X)
        div.append(l2_norm(codifferential(X), region))
        tj = np.where(I, (Mu[:, j] * tlap).sum(axis=1), 0.0)
        tang.append(float(np.sqrt((tj[region] ** 2).sum() * dom.cell_volume)))
        nz = dun > 1e-14 * max(1.0, dun.max(initial=0.0))
        if nz.any():
            ratio = max(ratio, float((X.pointwise_norm()[nz] / dun[nz]).max()))
    return NoetherCurrents(currents, np.array(div), np.array(tang), ratio, target.lipschitz_constant)


def conservation_residual(u: MapField, region=None) -> dict:
    """R = Lap u - sum_j X_j . d(M_j u) for sphere targets.

    By the sphere identity the contraction equals ``<u, du> du - u |du|^2``,
    so R is the discrete harmonic-map operator ``Lap u + u |du|^2``.
    """
    if not isinstance(u.target, Sphere):
        raise ValueError("the conservation-law form is implemented for sphere targets only")
    dom = u.domain
    region = dom.interior if region is None else region
    nc = noether_currents(u, region)
    gens = u.target.generators
    du = exterior_derivative(u.u).values  # (n, m, d)
    contraction = np.zeros((dom.n_nodes, u.target.d))
    for j, X in enumerate(nc.currents):
        dMu = du @ gens[j].T  # d(M_j u), (n, m, d)
        contraction += np.einsum("ni,nia->na", X.values, dMu)
    lap = dom.laplacian_matrix @ u.values
    R = np.where(region[:, None], lap - contraction, 0.0)
    R_l2 = float(np.sqrt((R**2).sum() * dom.cell_volume))
    energy = float((du[region] ** 2).sum() * dom.cell_volume)
    return {"residual_l2": R_l2, "relative": R_l2 / energy if energy > 0 else 0.0,
            "du_l2_sq": energy, "tension_l2": tension_residual(u)}


# -- regularity --------------------------------------------------------------

def second_differences(f: Field) -> np.ndarray:
    """All second partials (n, m, m, ...) by centred differences, zero off interior nodes."""
    dom = f.domain
    flat = f.values.reshape(dom.n_nodes, -1)
    out = np.zeros((dom.n_nodes, dom.m, dom.m, flat.shape[1]))
    I = dom.interior
    D = dom.derivative_matrices
    for i in range(dom.m):
        nf, _ = dom.neighbor(i, 1)
        nb, _ = dom.neighbor(i, -1)
        out[I, i, i] = (flat[nf[I]] - 2 * flat[I] + flat[nb[I]]) / dom.h**2
        for j in range(i + 1, dom.m):
            mixed = D[i] @ (D[j] @ flat)
            out[I, i, j] = out[I, j, i] = mixed[I]
    return out


def regularity_ratios(u: MapField, family: BallFamily | None = None) -> dict:
    """[u]_BMO with the two scale-free ratios on B_{1/2}."""
    dom = u.domain
    origin = np.zeros(dom.m)
    half = dom.ball(origin, 0.5)
    du = exterior_derivative(u.u)
    grad_sup = lp_norm(du, np.inf, half)
    vals = u.values[dom.valid]
    osc_l1 = float(np.linalg.norm(vals - vals.mean(axis=0), axis=1).sum() * dom.cell_volume)
    hess = second_differences(u.u)
    hess_l1 = float(np.sqrt((hess**2).reshape(dom.n_nodes, -1).sum(axis=1))[half & dom.interior].sum()
                    * dom.cell_volume)
    energy = lp_norm(du, 2) ** 2
    bmo = bmo_seminorm(u.u, family).value
    constant = osc_l1 == 0.0 or energy == 0.0
    return {
        "bmo": bmo,
        "grad_sup_half": grad_sup, "osc_l1": osc_l1, "hess_l1_half": hess_l1, "energy": energy,
        "ratio_grad": None if constant else grad_sup / osc_l1,
        "ratio_hess": None if constant else hess_l1 / energy,
        "constant": constant,
    }


@dataclass
class RegularityReport:
    members: list
    excluded: list
    eps_grid: list
    sup_ratio_grad: list
    sup_ratio_hess: list
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"members": self.members, "excluded": self.excluded, "eps_grid": self.eps_grid,
                "sup_ratio_grad": self.sup_ratio_grad, "sup_ratio_hess": self.sup_ratio_hess}

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["member", "bmo", "ratio_grad", "ratio_hess", "constant"])
        for row in self.members:
            w.writerow([row["member"], repr(row["bmo"]), repr(row["ratio_grad"]),
                        repr(row["ratio_hess"]), row["constant"]])
        return buf.getvalue()


def regularity_experiment(states, eps_grid=(0.025, 0.05, 0.1)) -> RegularityReport:
    """Tabulate regularity ratios over converged flow states, with sup per BMO level."""
    members, excluded = [], []
    for k, st in enumerate(states):
        if not st.converged:
            excluded.append({"member": k, "reason": st.reason})
            continue
        r = regularity_ratios(st.u)
        members.append({"member": k, **{key: r[key] for key in ("bmo", "ratio_grad", "ratio_hess", "constant")}})
    sup_g, sup_h = [], []
    for eps in eps_grid:
        sel = [r for r in members if not r["constant"] and r["bmo"] <= eps]
        sup_g.append(max((r["ratio_grad"] for r in sel), default=None))
        sup_h.append(max((r["ratio_hess"] for r in sel), default=None))
    return RegularityReport(members, excluded, list(eps_grid), sup_g, sup_h)


def monotonicity_profile(f: Field, center=None, radii=None) -> dict:
    """r^{-m} ||df||^2_{L2(B_r)} over a radius family and its worst relative drop."""
    dom = f.domain
    center = np.zeros(dom.m) if center is None else np.asarray(center, dtype=float)
    if radii is None:
        # balls must stay inside B_1, otherwise truncation breaks monotonicity
        radii = BallFamily.dyadic(dom).radii
        radii = radii[radii <= 1.0 - np.linalg.norm(center) + 1e-12]
    radii = np.sort(np.asarray(radii))
    dens = exterior_derivative(f).pointwise_norm() ** 2
    vals = np.array([dens[dom.ball(center, r)].sum() * dom.cell_volume / r**dom.m for r in radii])
    drops = (vals[:-1] - vals[1:]) / np.maximum(vals[1:], 1e-300)
    return {"radii": radii.tolist(), "values": vals.tolist(),
            "worst_drop": float(drops.max(initial=0.0))}


def decay_iteration_probe(u: MapField, n_probes: int = 5, offset: float = 0.25) -> dict:
    """Split u - mean = h + v with Lap v = X_j . d(M_j u), v = 0 on the sphere.

    For each probe centre tabulate ||d.||^2 on dyadic balls inside B_1 and
    fit a power law; report ||dv||^2 / (||du||^2 [u]_BMO^2).
    """
    if not isinstance(u.target, Sphere):
        raise ValueError("the decay probe uses the sphere conservation law")
    dom = u.domain
    mean = u.values[dom.valid].mean(axis=0)
    uc = np.where(dom.valid[:, None], u.values - mean, 0.0)
    gens = u.target.generators
    du = exterior_derivative(u.u).values
    rhs = np.zeros_like(uc)
    for M in gens:
        X = np.einsum("na,nia->ni", u.values @ M.T, du)
        rhs += np.einsum("ni,nia->na", X, du @ M.T)
    rhs[~dom.interior] = 0.0
    v = poisson_solve(Field.from_nodes(dom, rhs), "dirichlet-zero")
    h = Field.from_nodes(dom, uc).with_values(Field.from_nodes(dom, uc).values - v.values)
    dens = {name: exterior_derivative(fld).pointwise_norm() ** 2
            for name, fld in (("u", u.u), ("h", h), ("v", v))}
    dirs = [np.zeros(dom.m)]
    for k in range(n_probes - 1):
        e = np.zeros(dom.m)
        e[(k // 2) % dom.m] = offset * (1 if k % 2 == 0 else -1)
        dirs.append(e)
    probes = []
    for c in dirs:
        node = dom.nearest_node(c)
        x = dom.coords[node]
        R = 1.0 - float(np.linalg.norm(x)) - dom.h
        radii = []
        r = R
        while r >= 4 * dom.h:
            radii.append(r)
            r /= 2
        rows = {}
        for name, dn in dens.items():
            rows[name] = [float(dn[dom.ball(x, rr)].sum() * dom.cell_volume) for rr in radii]
        fit = {}
        for name, e in rows.items():
            e = np.asarray(e)
            ok = e > 0
            fit[name] = (float(np.polyfit(np.log(np.asarray(radii)[ok]), np.log(e[ok]), 1)[0])
                         if ok.sum() >= 2 else None)
        probes.append({"center": x.tolist(), "radii": radii, "energies": rows, "exponents": fit})
    du2 = float(dens["u"][dom.valid].sum() * dom.cell_volume)
    dv2 = float(dens["v"][dom.valid].sum() * dom.cell_volume)
    bmo = bmo_seminorm(u.u).value
    return {"probes": probes, "du_l2_sq": du2, "dv_l2_sq": dv2, "bmo": bmo,
            "v_constant": dv2 / (du2 * bmo**2) if du2 > 0 and bmo > 0 else None}
