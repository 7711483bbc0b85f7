"""Jacobian (div-curl) products, the Wente problem and the duality pairing."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .grid import Field, exterior_derivative, form_indices, l2_norm, poisson_solve
from .maps import band_limited
from .norms import bmo_seminorm, morrey_norm

WENTE_CONSTANT = float(np.sqrt(3.0 / (16.0 * np.pi)))


def jacobian(a: Field, b: Field) -> Field:
    """d1 a d2 b - d2 a d1 b as a scalar 0-form."""
    if a.domain is not b.domain or a.domain.m != 2:
        raise ValueError("the Jacobian needs two scalar fields on the same 2-d domain")
    if a.degree or b.degree or a.value_shape or b.value_shape:
        raise ValueError("the Jacobian needs scalar 0-forms")
    da = exterior_derivative(a).values
    db = exterior_derivative(b).values
    return Field(a.domain, 0, da[:, 0:1] * db[:, 1:2] - da[:, 1:2] * db[:, 0:1])


@dataclass
class WenteInstance:
    """Solution of Laplacian(phi) = J(a, b) with phi = 0 on the circle."""

    a: Field
    b: Field
    phi: Field
    dphi_l2: float
    phi_sup: float
    da_l2: float
    db_l2: float
    seed: int | None = None

    @property
    def rho(self) -> float:
        den = self.da_l2 * self.db_l2
        return self.dphi_l2 / den if den > 0 else 0.0

    def row(self) -> list:
        return [self.seed, self.da_l2, self.db_l2, self.dphi_l2, self.rho]


def wente_solve(a: Field, b: Field, seed: int | None = None) -> WenteInstance:
    if a.domain.m != 2:
        raise ValueError(f"the Wente problem is set on the disc (m = 2), got m = {a.domain.m}")
    J = jacobian(a, b)
    phi = poisson_solve(J, "dirichlet-zero")
    return WenteInstance(a, b, phi, l2_norm(exterior_derivative(phi)),
                         float(np.abs(phi.values[phi.domain.valid]).max(initial=0.0)),
                         l2_norm(exterior_derivative(a)), l2_norm(exterior_derivative(b)), seed)


def random_pair(domain, seed: int, max_freq: int | None = None):
    """Band-limited pair (a, b) drawn from one seed."""
    return band_limited(domain, 2 * seed, max_freq), band_limited(domain, 2 * seed + 1, max_freq)


def wente_suite(domain, seeds, max_freq: int | None = None) -> list:
    return [wente_solve(*random_pair(domain, s, max_freq), seed=s) for s in seeds]


def wente_csv(instances) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "da_l2", "db_l2", "dphi_l2", "rho"])
    for inst in instances:
        w.writerow([inst.seed, *(repr(float(v)) for v in inst.row()[1:])])
    return buf.getvalue()


def duality_pairing(xi: Field, Q: Field) -> float:
    """2 sum_nodes h^m sum_{i,k,l} <xi^{kl}, dQ^i_k ^ dQ^i_l>.

    The (k, l) sum is taken over pairs k < l with the antisymmetric part of
    xi, so symmetric xi gives exactly zero.
    """
    dom = Q.domain
    if xi.domain is not dom or xi.degree != 2 or Q.degree != 0:
        raise ValueError("duality pairing needs a matrix 2-form xi and a matrix 0-form Q")
    if xi.value_kind != "matrix" or xi.value_shape != Q.value_shape:
        raise ValueError("xi and Q must carry matrices of the same shape")
    m = dom.m
    dQ = exterior_derivative(Q).values  # (n, m, d, d)
    pairs = form_indices(m, 2)
    d = Q.value_shape[0]
    total = np.zeros(dom.n_nodes)
    for c, (p, q) in enumerate(pairs):
        a, b = dQ[:, p], dQ[:, q]
        # W[k, l] = sum_i (a_ik b_il - b_ik a_il), antisymmetric in (k, l)
        W = np.einsum("nik,nil->nkl", a, b)
        W = W - np.swapaxes(W, 1, 2)
        X = xi.values[:, c]
        for k in range(d):
            for l in range(k + 1, d):
                total += (X[:, k, l] - X[:, l, k]) * W[:, k, l]
    total[~dom.valid] = 0.0
    return float(2.0 * total.sum() * dom.cell_volume)


def _stack_components(f: Field, degree: int) -> Field:
    """View any field as a vector-valued field of the given degree for norm estimators."""
    n = f.domain.n_nodes
    if degree == 0:
        return Field(f.domain, 0, f.values.reshape(n, 1, -1))
    return Field(f.domain, degree, f.values.reshape(n, f.values.shape[1], -1))


def gradient_of(f: Field) -> Field:
    """All first partials of every component, as a vector-valued 1-form."""
    dom = f.domain
    flat = f.values.reshape(dom.n_nodes, -1)
    D = dom.derivative_matrices
    return Field(dom, 1, np.stack([Di @ flat for Di in D], axis=1))


def smallness_certificate(gauge, q_report: dict, degenerate_tol: float = 1e-12) -> dict:
    """kappa = pairing / ||dQ||^2 with the BMO and Morrey proxies of xi."""
    xi = gauge.xi
    dQ2 = q_report["dQ_l2"] ** 2
    morrey_dxi = morrey_norm(gradient_of(xi)).value
    bmo_xi = bmo_seminorm(_stack_components(xi, 0)).value
    out = {"dQ_l2_sq": dQ2, "morrey_Dxi": morrey_dxi, "bmo_xi": bmo_xi}
    if q_report["dQ_l2"] <= degenerate_tol:
        out.update(kappa=None, exact_constancy=True, pairing=0.0)
        return out
    pairing = duality_pairing(xi, q_report["Q"])
    out.update(kappa=pairing / dQ2, exact_constancy=False, pairing=pairing)
    return out
