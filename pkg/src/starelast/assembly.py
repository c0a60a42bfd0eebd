"""Pullback of the Navier operator to strip coordinates and angular FE assembly.

With J_hat(phi) the rho-independent part of the coordinate Jacobian,

    J_hat = [[r c, r' c - r s], [r s, r' s + r c]],   det J_hat = r^2,

the elastic energy of fields on the strip reads

    a(u, v) = int int  sum_{ab} (d_a v)^T K_ab (d_b u)  drho dphi,
    K_ab[c,d] = det * ( lam B[c,a] B[d,b] + mu delta_cd (B^T B)[a,b]
                        + mu B[d,a] B[c,b] ),        B = J_hat^{-T},

(the exp(rho) factors of the two gradients cancel the area element).  Angular
semi-discretization with periodic P1/P2 elements yields the block matrices
M_rr, M_rp, M_pr, M_pp of the constant-coefficient radial ODE system

    -M_rr U'' + (M_pr - M_rp) U' + M_pp U = exp(s rho) b.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import AngularMesh, GeometryError, ConfigurationError, SubdomainSpec

GAUSS_POINTS = {1: 5, 2: 7}


class AssemblyError(RuntimeError):
    pass


def pullback(phi, r, rp, mu, lam):
    """Energy-density coefficient matrices of the strip formulation.

    Accepts scalars or same-length arrays; returns K with shape
    (..., 2, 2, 2, 2) indexed [a, b, c, d] = (deriv of test, deriv of trial,
    test component, trial component), and the Jacobian determinant r^2.
    """
    phi = np.asarray(phi, dtype=float)
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    det = r * r
    if np.any(det <= 0.0):
        raise GeometryError("singular coordinate Jacobian (r <= 0)")
    # B = J_hat^{-T}, with J_hat as in the module docstring
    inv = 1.0 / det
    B = np.empty(phi.shape + (2, 2))
    B[..., 0, 0] = (rp * s + r * c) * inv
    B[..., 0, 1] = -r * s * inv
    B[..., 1, 0] = -(rp * c - r * s) * inv
    B[..., 1, 1] = r * c * inv
    # B[p, a]: Cartesian derivative p from strip derivative a (after transpose
    # convention below indices are B[..., p, a])
    BtB = np.einsum("...pa,...pb->...ab", B, B)
    K = (np.asarray(lam)[..., None, None, None, None]
         * np.einsum("...ca,...db->...abcd", B, B)
         + np.asarray(mu)[..., None, None, None, None]
         * (np.einsum("...ab,cd->...abcd", BtB, np.eye(2))
            + np.einsum("...da,...cb->...abcd", B, B)))
    K *= det[..., None, None, None, None]
    return K, det


def _ref_basis(order: int, xg: np.ndarray):
    """Lagrange basis values/derivatives on the reference element [0, 1]."""
    if order == 1:
        N = np.stack([1.0 - xg, xg], axis=1)
        dN = np.stack([-np.ones_like(xg), np.ones_like(xg)], axis=1)
    else:
        N = np.stack([2.0 * (xg - 0.5) * (xg - 1.0),
                      -4.0 * xg * (xg - 1.0),
                      2.0 * xg * (xg - 0.5)], axis=1)
        dN = np.stack([4.0 * xg - 3.0, 4.0 - 8.0 * xg, 4.0 * xg - 1.0], axis=1)
    return N, dN


@dataclass
class SemiDiscreteSystem:
    """Angular FE matrices of one subdomain's radial ODE system."""

    M_rr: np.ndarray
    M_rp: np.ndarray
    M_pr: np.ndarray
    M_pp: np.ndarray
    mesh: AngularMesh
    sub: SubdomainSpec
    body_force: Optional[Tuple[np.ndarray, float]] = None  # (b, s)

    @property
    def n_dofs(self) -> int:
        return self.M_rr.shape[0]

    def pencil(self, gamma: complex) -> np.ndarray:
        """Q(gamma) = -gamma^2 M_rr + gamma (M_pr - M_rp) + M_pp."""
        return (-gamma**2 * self.M_rr + gamma * (self.M_pr - self.M_rp)
                + self.M_pp)


def assemble(mesh: AngularMesh, sub: SubdomainSpec,
             n_gauss: Optional[int] = None) -> SemiDiscreteSystem:
    """Assemble the four angular FE matrices with Gauss quadrature per element.

    Requires mesh vertices at every sector and segment breakpoint so that the
    pulled-back coefficients are smooth on each element.
    """
    order = mesh.order
    ng = n_gauss if n_gauss is not None else GAUSS_POINTS[order]
    _check_alignment(mesh, sub)
    xg, wg = np.polynomial.legendre.leggauss(ng)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    Nref, dNref = _ref_basis(order, xg)

    n = 2 * mesh.n_nodes
    mats = {k: np.zeros((n, n)) for k in ("rr", "rp", "pr", "pp")}
    for e in range(mesh.n_elements):
        a, b = mesh.nodes[e], mesh.nodes[e + 1]
        h = b - a
        phis = a + h * xg
        r, rp = sub.radius(phis)
        mu, lam = sub.material(0.5 * (a + b))
        K, _ = pullback(phis, r, rp, mu, lam)
        w = wg * h
        N, dN = Nref, dNref / h
        # local blocks: loc[ab][i c, j d] = sum_q w_q Ni^(da) K[q,a,b,c,d] Nj^(db)
        loc_rr = np.einsum("q,qi,qcd,qj->icjd", w, N, K[:, 0, 0], N)
        loc_rp = np.einsum("q,qi,qcd,qj->icjd", w, N, K[:, 0, 1], dN)
        loc_pr = np.einsum("q,qi,qcd,qj->icjd", w, dN, K[:, 1, 0], N)
        loc_pp = np.einsum("q,qi,qcd,qj->icjd", w, dN, K[:, 1, 1], dN)
        gidx = mesh.element_nodes(e)
        dofs = np.stack([2 * gidx, 2 * gidx + 1], axis=1).ravel()
        ii, jj = np.meshgrid(dofs, dofs, indexing="ij")
        nb = len(gidx)
        for key, loc in (("rr", loc_rr), ("rp", loc_rp),
                         ("pr", loc_pr), ("pp", loc_pp)):
            mats[key][ii, jj] += loc.reshape(2 * nb, 2 * nb)
    return SemiDiscreteSystem(mats["rr"], mats["rp"], mats["pr"], mats["pp"],
                              mesh, sub)


def _check_alignment(mesh: AngularMesh, sub: SubdomainSpec):
    nodes = mesh.nodes
    for bp in sub.breakpoints():
        d = np.min(np.abs(nodes - bp))
        if mesh.periodic:
            d = min(d, abs(bp - (nodes[-1] - 2.0 * np.pi)))
        if d > 1e-9:
            raise AssemblyError(
                f"sector/segment breakpoint {bp:.6f} is not a mesh vertex")


def assemble_body_force(mesh: AngularMesh, sub: SubdomainSpec,
                        p_spec) -> Tuple[np.ndarray, float]:
    """Separable load exp(s rho) b(phi) of a supported body force.

    p_spec: ("constant", (p1, p2)) or ("unit_radial",); both pull back with
    exponent s = 2 and b[a] = int N_a p(phi) det J_hat dphi.
    """
    kind = p_spec[0]
    if kind not in ("constant", "unit_radial"):
        raise ConfigurationError(f"unsupported body force {kind!r}")
    order = mesh.order
    ng = GAUSS_POINTS[order] + 2
    xg, wg = np.polynomial.legendre.leggauss(ng)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    Nref, _ = _ref_basis(order, xg)
    b = np.zeros(2 * mesh.n_nodes)
    for e in range(mesh.n_elements):
        a, bb = mesh.nodes[e], mesh.nodes[e + 1]
        h = bb - a
        phis = a + h * xg
        r, _ = sub.radius(phis)
        det = r * r
        if kind == "constant":
            p = np.broadcast_to(np.asarray(p_spec[1], float), (ng, 2))
        else:
            p = np.stack([np.cos(phis), np.sin(phis)], axis=1)
        loc = np.einsum("q,qi,qc->ic", wg * h * det, Nref, p)
        gidx = mesh.element_nodes(e)
        dofs = np.stack([2 * gidx, 2 * gidx + 1], axis=1).ravel()
        np.add.at(b, dofs, loc.ravel())
    return b, 2.0


def basis_matrix(mesh: AngularMesh, phis: np.ndarray, derivative: bool = False):
    """Interpolation matrix P with P[q, a] = N_a(phis[q]) (or N_a').

    phis must lie in [0, 2*pi]; values exactly at 2*pi wrap to the first
    element's start.
    """
    phis = np.asarray(phis, dtype=float)
    P = np.zeros((len(phis), mesh.n_nodes))
    elems = np.clip(np.searchsorted(mesh.nodes, phis, side="right") - 1,
                    0, mesh.n_elements - 1)
    for q, (phi, e) in enumerate(zip(phis, elems)):
        a, b = mesh.nodes[e], mesh.nodes[e + 1]
        x = np.asarray([(phi - a) / (b - a)])
        N, dN = _ref_basis(mesh.order, x)
        vals = (dN[0] / (b - a)) if derivative else N[0]
        P[q, mesh.element_nodes(e)] += vals
    return P
