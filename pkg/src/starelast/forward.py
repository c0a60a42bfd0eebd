"""Global coupling system over all subdomains and the evaluable solution.

The unknowns are the modal coefficient blocks alpha^(k) (real basis).  Rows of
the coupling matrix G impose, per boundary node pair of components:

  * exterior Dirichlet:   trace rows of W^(k),
  * interface continuity: trace row difference between the paired nodes,
  * interface flux:       SUM of the weak-flux rows (H W)^(a) and (H W)^(b),
                          each built with its subdomain's own outward normal.

A separable body force exp(s rho) b contributes the particular part
U_p(rho) = exp(s rho) w_p with Q(s) w_p = b, whose traces and fluxes move to
the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .geometry import (AngularMesh, ConfigurationError, DecomposedDomain,
                       build_angular_mesh, match_interfaces, normalize_angle,
                       to_cartesian)
from .assembly import (SemiDiscreteSystem, assemble, assemble_body_force,
                       basis_matrix, pullback)
from .modal import ModalBasis, build_basis, SpectralError


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------

@dataclass
class BoundaryData:
    """Dirichlet displacement data on the exterior boundary."""

    kind: str
    value: Tuple[float, float] = (0.0, 0.0)
    func: Optional[Callable] = None

    @classmethod
    def constant(cls, f1: float, f2: float) -> "BoundaryData":
        return cls("constant", value=(f1, f2))

    @classmethod
    def poly_yx(cls) -> "BoundaryData":
        return cls("poly_yx")

    @classmethod
    def from_callable(cls, func: Callable) -> "BoundaryData":
        return cls("tabulated", func=func)

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        if self.kind == "constant":
            out = np.empty_like(xy)
            out[..., 0], out[..., 1] = self.value
            return out
        if self.kind == "poly_yx":
            return np.stack([y**2, -(x**2)], axis=-1)
        return np.asarray(self.func(x, y))

    @classmethod
    def from_json(cls, d: dict) -> "BoundaryData":
        if d["kind"] == "constant":
            return cls.constant(*d["value"])
        if d["kind"] == "poly_yx":
            return cls.poly_yx()
        raise ConfigurationError(f"unknown boundary data kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# per-subdomain bundle and particular solution
# ---------------------------------------------------------------------------

def particular_solution(sys: SemiDiscreteSystem,
                        basis: Optional[ModalBasis] = None):
    """Solve Q(s) w_p = b for the separable body-force load exp(s rho) b."""
    if sys.body_force is None:
        return np.zeros(sys.n_dofs), 0.0
    b, s = sys.body_force
    if basis is not None:
        gap = np.min(np.abs(basis.gammas - s))
        if gap < 1e-6:
            raise SolverError(
                f"body-force exponent s={s} within {gap:.1e} of a pencil "
                "eigenvalue (resonance)")
    Q = sys.pencil(s)
    try:
        w_p = np.linalg.solve(np.real(Q), b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Q(s) singular for s={s}: {exc}") from exc
    return w_p, s


@dataclass
class SubdomainSolve:
    """Everything the coupled system needs from one subdomain."""

    index: int
    mesh: AngularMesh
    system: SemiDiscreteSystem
    basis: ModalBasis
    w_p: np.ndarray
    s: float

    @property
    def flux_particular(self) -> np.ndarray:
        return self.s * (self.system.M_rr @ self.w_p) + self.system.M_rp @ self.w_p


def _interface_endpoints(domain: DecomposedDomain) -> List[list]:
    endpoints = [[] for _ in domain.subdomains]
    for itf in domain.interfaces:
        endpoints[itf.sub_a].extend(itf.arc_a)
        endpoints[itf.sub_b].extend(itf.arc_b)
    return endpoints


def prepare_subdomains(domain: DecomposedDomain, M: int, p: int = 1,
                       force_spec=None) -> List[SubdomainSolve]:
    bundles = []
    endpoints = _interface_endpoints(domain)
    for k, sub in enumerate(domain.subdomains):
        mesh = build_angular_mesh(sub, k, M, endpoints[k], p)
        sys = assemble(mesh, sub)
        if force_spec is not None:
            sys.body_force = assemble_body_force(mesh, sub, force_spec)
        basis = build_basis(sys)
        w_p, s = particular_solution(sys, basis)
        bundles.append(SubdomainSolve(k, mesh, sys, basis, w_p, s))
    return bundles


# ---------------------------------------------------------------------------
# coupled system
# ---------------------------------------------------------------------------

@dataclass
class CoupledSystem:
    G: np.ndarray
    F: np.ndarray
    row_map: list          # (category, subdomain(s), node(s)) per row pair
    offsets: np.ndarray    # column offset of each subdomain's alpha block


def build_coupled_system(domain: DecomposedDomain,
                         bundles: Sequence[SubdomainSolve],
                         f: BoundaryData,
                         pairings: Sequence[tuple]) -> CoupledSystem:
    sizes = [2 * b.mesh.n_nodes for b in bundles]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    ntot = offsets[-1]
    G = np.zeros((ntot, ntot))
    F = np.zeros(ntot)
    row_map = []
    claimed = [np.zeros(b.mesh.n_nodes, dtype=bool) for b in bundles]
    flux_rows = [b.basis.flux_rows(b.system) for b in bundles]

    row = 0
    for itf, (ia, ib) in zip(domain.interfaces, pairings):
        a, b = itf.sub_a, itf.sub_b
        ba, bb = bundles[a], bundles[b]
        for ja, jb in zip(ia, ib):
            if claimed[a][ja] or claimed[b][jb]:
                raise SolverError(
                    f"node claimed by two interfaces (subs {a}/{b}, "
                    f"nodes {ja}/{jb})")
            claimed[a][ja] = claimed[b][jb] = True
            sa, sb = slice(2 * ja, 2 * ja + 2), slice(2 * jb, 2 * jb + 2)
            ca = slice(offsets[a], offsets[a + 1])
            cb = slice(offsets[b], offsets[b + 1])
            G[row:row + 2, ca] = ba.basis.W_real[sa, :]
            G[row:row + 2, cb] = -bb.basis.W_real[sb, :]
            F[row:row + 2] = bb.w_p[sb] - ba.w_p[sa]
            row_map.append(("continuity", (a, b), (ja, jb)))
            G[row + 2:row + 4, ca] = flux_rows[a][sa, :]
            G[row + 2:row + 4, cb] = flux_rows[b][sb, :]
            F[row + 2:row + 4] = -(ba.flux_particular[sa]
                                   + bb.flux_particular[sb])
            row_map.append(("flux", (a, b), (ja, jb)))
            row += 4

    for k, bun in enumerate(bundles):
        free = np.nonzero(~claimed[k])[0]
        if len(free) == 0:
            continue
        angles = bun.mesh.dof_angles[free]
        xy = to_cartesian(domain.subdomains[k], np.zeros_like(angles), angles)
        fv = f(xy)
        ck = slice(offsets[k], offsets[k + 1])
        for j, val in zip(free, fv):
            sj = slice(2 * j, 2 * j + 2)
            G[row:row + 2, ck] = bun.basis.W_real[sj, :]
            F[row:row + 2] = val - bun.w_p[sj]
            row_map.append(("dirichlet", k, j))
            row += 2
    if row != ntot:
        raise SolverError(f"row count {row} != unknown count {ntot}")

    # unit row-norm scaling of continuity and flux rows
    n_itf_rows = 4 * sum(len(ia) for ia, _ in pairings)
    if n_itf_rows:
        norms = np.linalg.norm(G[:n_itf_rows], axis=1)
        if np.any(norms <= 0):
            raise SolverError("zero interface row in coupling matrix")
        G[:n_itf_rows] /= norms[:, None]
        F[:n_itf_rows] /= norms
    return CoupledSystem(G, F, row_map, offsets)


# ---------------------------------------------------------------------------
# forward solution
# ---------------------------------------------------------------------------

@dataclass
class ForwardSolution:
    domain: DecomposedDomain
    bundles: List[SubdomainSolve]
    alphas: List[np.ndarray]
    residual: float
    coupled: Optional[CoupledSystem] = None
    extended: bool = False

    # coefficient magnitude above which double-precision cancellation noise
    # (|alpha| * eps) would exceed ~1e-9 absolute in the summed field
    _BIG_COEFF = 1e6

    def _modal_sum(self, k: int, coeff: np.ndarray, rhos: np.ndarray):
        """W_real @ E(rho) @ coeff as a float array.

        In extended mode the large-magnitude coefficient blocks (the only
        ones whose mutual cancellation exceeds double rounding) are summed
        in long-double arithmetic; the remaining blocks go through a fast
        double-precision product.
        """
        basis = self.bundles[k].basis
        coeff = np.asarray(coeff, dtype=float)
        if not self.extended:
            return basis.W_real @ basis.propagate(coeff, rhos)
        big = np.zeros(basis.n, dtype=bool)
        for blk in basis.blocks:
            c, w = blk[0], (2 if len(blk) == 3 else 1)
            if np.max(np.abs(coeff[c:c + w])) > self._BIG_COEFF:
                big[c:c + w] = True
        out = basis.W_real @ basis.propagate(np.where(big, 0.0, coeff), rhos)
        if np.any(big):
            cl = np.where(big, coeff, 0.0).astype(np.longdouble)
            P = basis.propagate(cl, np.asarray(rhos, dtype=np.longdouble))
            out = out + np.asarray(
                basis.W_real[:, big].astype(np.longdouble) @ P[big],
                dtype=float)
        return out

    def eval_grid(self, k: int, phis: np.ndarray, rhos: np.ndarray,
                  need_grad: bool = True):
        """Evaluate on the tensor grid phis x rhos in subdomain k.

        Returns (u, grad) with u shape (n_phi, 2, n_rho) and grad shape
        (n_phi, 2, 2, n_rho) (Cartesian gradient, grad[p, c, i, r] =
        d u_c / d x_i); grad is None when need_grad is False.

        With extended=True the modal superposition runs in long-double
        arithmetic: at high resolution the basis is ill-conditioned and the
        coefficients cancel strongly, so double-precision summation leaves
        O(|alpha| eps) absolute noise near rho = 0.
        """
        bun = self.bundles[k]
        phis = np.asarray(phis, dtype=float)
        rhos = np.asarray(rhos, dtype=float)
        basis = bun.basis
        U = self._modal_sum(k, self.alphas[k], rhos)
        if bun.s != 0.0 or np.any(bun.w_p):
            es = np.exp(bun.s * rhos)
            U = U + bun.w_p[:, None] * es[None, :]
        nn = bun.mesh.n_nodes
        P = basis_matrix(bun.mesh, phis)
        u = (P @ U.reshape(nn, -1)).reshape(len(phis), 2, -1)
        if not need_grad:
            return u, None
        Up = self._modal_sum(k, basis.gamma_matrix() @ self.alphas[k], rhos)
        if bun.s != 0.0 or np.any(bun.w_p):
            Up = Up + bun.s * bun.w_p[:, None] * es[None, :]
        Pd = basis_matrix(bun.mesh, phis, derivative=True)
        du_rho = (P @ Up.reshape(nn, -1)).reshape(len(phis), 2, -1)
        du_phi = (Pd @ U.reshape(nn, -1)).reshape(len(phis), 2, -1)
        sub = self.domain.subdomains[k]
        r, rp = sub.radius(phis)
        c, s = np.cos(phis), np.sin(phis)
        det = r * r
        B = np.empty((len(phis), 2, 2))
        B[:, 0, 0] = (rp * s + r * c) / det
        B[:, 0, 1] = -r * s / det
        B[:, 1, 0] = -(rp * c - r * s) / det
        B[:, 1, 1] = r * c / det
        erho = np.exp(-rhos)
        strip = np.stack([du_rho, du_phi], axis=2)  # (p, c, a, r)
        grad = np.einsum("pia,pcar,r->pcir", B, strip, erho)
        return u, grad

    def evaluate(self, k: int, rho: float, phi: float):
        """Displacement, Cartesian gradient and stress at one strip point."""
        u, grad = self.eval_grid(k, np.array([phi]), np.array([rho]))
        g = grad[0, :, :, 0]
        eps = 0.5 * (g + g.T)
        mu, lam = self.domain.subdomains[k].material(phi)
        sigma = 2.0 * mu * eps + lam * np.trace(eps) * np.eye(2)
        return u[0, :, 0], g, sigma

    def radial_profile(self, k: int, phi0: float, rhos: np.ndarray):
        """(r, du1/dr, du2/dr) along the ray phi = phi0."""
        u, grad = self.eval_grid(k, np.array([phi0]), rhos)
        sub = self.domain.subdomains[k]
        rt, _ = sub.radius(np.array([phi0]))
        r = np.exp(rhos) * rt[0]
        # du/dr = exp(-rho)/rt * du/drho
        bun = self.bundles[k]
        basis = bun.basis
        Up = basis.W_real @ basis.propagate(
            basis.gamma_matrix() @ self.alphas[k], rhos)
        if bun.s != 0.0 or np.any(bun.w_p):
            Up = Up + bun.s * bun.w_p[:, None] * np.exp(bun.s * rhos)[None, :]
        P = basis_matrix(bun.mesh, np.array([phi0]))
        du_rho = np.einsum("pn,ncr->pcr", P, Up.reshape(bun.mesh.n_nodes, 2, -1))
        dudr = du_rho[0] * np.exp(-rhos)[None, :] / rt[0]
        return r, dudr[0], dudr[1]

    def nodal_traces(self, k: int) -> np.ndarray:
        """Nodal boundary values at rho = 0 (length 2M vector)."""
        bun = self.bundles[k]
        return bun.basis.W_real @ self.alphas[k] + bun.w_p

    def gamma3(self, k: Optional[int] = 0) -> float:
        """Leading decay exponent of subdomain k (None: min over subdomains)."""
        if k is None:
            return min(b.basis.gamma3() for b in self.bundles)
        return self.bundles[k].basis.gamma3()


def solve_forward(domain: DecomposedDomain, M: int, f: BoundaryData,
                  force_spec=None, p: int = 1,
                  bundles: Optional[List[SubdomainSolve]] = None,
                  residual_tol: float = 1e-8) -> ForwardSolution:
    """End-to-end forward solve: mesh, assemble, modal bases, coupled solve.

    residual_tol gates the relative algebraic residual of the coupled system.
    On non-circular geometries the modal trace basis is non-normal and its
    conditioning grows with resolution, so very fine high-order runs (used
    only as convergence references) need a relaxed gate."""
    if bundles is None:
        bundles = prepare_subdomains(domain, M, p, force_spec)
    meshes = [b.mesh for b in bundles]
    pairings = match_interfaces(domain, meshes)
    cs = build_coupled_system(domain, bundles, f, pairings)
    try:
        # column equilibration: flux rows scale with the mode exponents, so
        # raw column norms vary over many orders of magnitude
        col = np.linalg.norm(cs.G, axis=0)
        col[col <= 0] = 1.0
        Gs = cs.G / col[None, :]
        lu_piv = sla.lu_factor(Gs)
        x = sla.lu_solve(lu_piv, cs.F)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError) as exc:
        raise SolverError(
            "singular coupling matrix (unmatched interface or resonance?): "
            f"{exc}") from exc
    # iterative refinement with extended-precision residuals: the coupling
    # matrix conditioning grows with resolution, and plain LU alone loses
    # accuracy on fine high-order runs
    nf = max(np.linalg.norm(cs.F), 1e-300)
    Fl = cs.F.astype(np.longdouble)
    Gl = Gs.astype(np.longdouble)
    resid = float(np.linalg.norm(
        np.asarray(Gl @ x.astype(np.longdouble) - Fl, dtype=float))) / nf
    stall = 0
    while resid > 1e-13 and stall < 3:
        r = np.asarray(Fl - Gl @ x.astype(np.longdouble), dtype=float)
        x_new = x + sla.lu_solve(lu_piv, r)
        r_new = float(np.linalg.norm(
            np.asarray(Gl @ x_new.astype(np.longdouble) - Fl,
                       dtype=float))) / nf
        if r_new < resid:
            x, resid = x_new, r_new
            stall = 0
        else:
            stall += 1
    x = x / col
    if resid > residual_tol:
        raise SolverError(f"coupled solve residual {resid:.3e}")
    alphas = [x[cs.offsets[k]:cs.offsets[k + 1]] for k in range(len(bundles))]
    return ForwardSolution(domain, bundles, alphas, float(resid), cs)


def interface_residuals(sol: ForwardSolution) -> Tuple[float, float]:
    """Max relative trace-continuity and flux-balance residuals over all
    paired interface nodes of a solved problem."""
    meshes = [b.mesh for b in sol.bundles]
    pairings = match_interfaces(sol.domain, meshes)
    traces = [sol.nodal_traces(k) for k in range(len(sol.bundles))]
    fluxes = []
    for k, bun in enumerate(sol.bundles):
        h = bun.basis.flux_rows(bun.system)
        fluxes.append(h @ sol.alphas[k] + bun.flux_particular)
    u_scale = max(float(np.max(np.abs(t))) for t in traces)
    f_scale = max(float(np.max(np.abs(t))) for t in fluxes)
    cont = flux = 0.0
    for itf, (ia, ib) in zip(sol.domain.interfaces, pairings):
        a, b = itf.sub_a, itf.sub_b
        for ja, jb in zip(ia, ib):
            sa, sb = slice(2 * ja, 2 * ja + 2), slice(2 * jb, 2 * jb + 2)
            cont = max(cont, float(np.max(np.abs(
                traces[a][sa] - traces[b][sb]))))
            flux = max(flux, float(np.max(np.abs(
                fluxes[a][sa] + fluxes[b][sb]))))
    return cont / max(u_scale, 1e-300), flux / max(f_scale, 1e-300)


# ---------------------------------------------------------------------------
# quadrature grids and norms
# ---------------------------------------------------------------------------

def rho_quadrature(rho_min: float = -18.0, n_panels: int = 12,
                   n_gauss: int = 8):
    """Composite Gauss rule on [rho_min, 0], panels graded toward 0."""
    edges = [rho_min * 0.5**j for j in range(n_panels)] + [0.0]
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    pts, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        pts.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * wg)
    return np.concatenate(pts), np.concatenate(wts)


def phi_quadrature(breakpoints: np.ndarray, n_gauss: int = 6):
    """Per-interval Gauss rule over consecutive breakpoints."""
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    pts, wts = [], []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        if b - a < 1e-14:
            continue
        pts.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * wg)
    return np.concatenate(pts), np.concatenate(wts)


def _energy_density(grad, mu, lam):
    """2 mu |eps|_F^2 + lam (div)^2 pointwise; grad shape (p, c, i, r)."""
    e11 = grad[:, 0, 0, :]
    e22 = grad[:, 1, 1, :]
    e12 = 0.5 * (grad[:, 0, 1, :] + grad[:, 1, 0, :])
    div = e11 + e22
    eps2 = e11**2 + e22**2 + 2.0 * e12**2
    return 2.0 * mu[:, None] * eps2 + lam[:, None] * div**2


class ErrorCache:
    """Reference fields pre-evaluated on a fixed quadrature grid.

    Measuring a whole M-sweep against one fine reference repeatedly pays for
    the (extended-precision) reference evaluation; caching it on the union of
    all involved mesh breakpoints makes every subsequent measurement cheap
    while keeping the phi quadrature exact for each solution's elements.
    """

    def __init__(self, ref: ForwardSolution, breakpoints: Sequence[np.ndarray],
                 rho_min: float = -18.0):
        self.ref = ref
        self.rq, self.rw = rho_quadrature(rho_min)
        self.per_sub = []
        for k, sub in enumerate(ref.domain.subdomains):
            bp = np.unique(np.concatenate(
                [ref.bundles[k].mesh.nodes, breakpoints[k]]))
            pq, pw = phi_quadrature(bp)
            ur, gr = ref.eval_grid(k, pq, self.rq)
            rt, _ = sub.radius(pq)
            mu = np.empty_like(pq)
            lam = np.empty_like(pq)
            for i, p in enumerate(pq):
                mu[i], lam[i] = sub.material(p)
            area_w = (pw[:, None] * self.rw[None, :]) \
                * np.exp(2.0 * self.rq)[None, :] * (rt**2)[:, None]
            den_l2 = np.sum(area_w * np.sum(ur**2, axis=1))
            den_en = np.sum(area_w * _energy_density(gr, mu, lam))
            self.per_sub.append((pq, area_w, ur, gr, mu, lam, den_l2, den_en))


def norms(sol: ForwardSolution, ref: ForwardSolution,
          rho_min: float = -18.0,
          cache: Optional[ErrorCache] = None) -> Tuple[float, float]:
    """Relative L2 and energy-norm errors of sol against a reference solution
    on the same decomposition (typically p = 2 on a finer mesh)."""
    if cache is None:
        cache = ErrorCache(ref, [sol.bundles[k].mesh.nodes
                                 for k in range(len(sol.bundles))], rho_min)
    num_l2 = den_l2 = num_en = den_en = 0.0
    for k in range(len(sol.domain.subdomains)):
        pq, area_w, ur, gr, mu, lam, dl2, den = cache.per_sub[k]
        u, g = sol.eval_grid(k, pq, cache.rq)
        num_l2 += np.sum(area_w * np.sum((u - ur)**2, axis=1))
        den_l2 += dl2
        num_en += np.sum(area_w * _energy_density(g - gr, mu, lam))
        den_en += den
    return (math.sqrt(num_l2 / den_l2), math.sqrt(num_en / den_en))


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    M: int
    eig_err: float
    eig_order: float
    l2_err: float
    l2_order: float
    en_err: float
    en_order: float
    gamma3: float = float("nan")


def convergence_study(domain: DecomposedDomain, M_list: Sequence[int],
                      f: BoundaryData, force_spec=None,
                      M_ref: Optional[int] = None, p_ref: int = 2,
                      gamma_ref: Optional[float] = None,
                      track_sub: int = 0) -> List[ConvergenceRow]:
    """Eigenvalue / L2 / energy errors over an M sweep against a refined
    higher-order reference run.  The exponent column tracks subdomain
    track_sub's leading eigenvalue."""
    if M_ref is None:
        M_ref = 2 * max(M_list)
    # the reference runs at a resolution where the modal basis conditioning
    # no longer supports the strict residual gate; errors are measured in
    # integral norms which are insensitive to the weak directions involved
    ref = solve_forward(domain, M_ref, f, force_spec, p=p_ref,
                        residual_tol=1e-3)
    # the reference's modal coefficients cancel strongly at this resolution;
    # evaluate it in extended precision so its field is reference-quality
    ref.extended = True
    if gamma_ref is None:
        gamma_ref = ref.gamma3(track_sub)
    # pre-evaluate the reference once on the union of every sweep mesh's
    # breakpoints; each row then only evaluates its own (coarse) solution
    endpoints = _interface_endpoints(domain)
    breakpoints = [
        np.unique(np.concatenate(
            [build_angular_mesh(sub, k, M, endpoints[k], 1).nodes
             for M in M_list]))
        for k, sub in enumerate(domain.subdomains)]
    cache = ErrorCache(ref, breakpoints)
    rows = []
    prev = None
    for M in sorted(M_list):
        sol = solve_forward(domain, M, f, force_spec, p=1)
        eig_err = abs(sol.gamma3(track_sub) - gamma_ref)
        l2, en = norms(sol, ref, cache=cache)
        order = lambda e, pe: (math.log2(pe / e) if prev and pe > 0 and e > 0
                               else float("nan"))
        rows.append(ConvergenceRow(
            M, eig_err,
            order(eig_err, prev.eig_err if prev else 0),
            l2, order(l2, prev.l2_err if prev else 0),
            en, order(en, prev.en_err if prev else 0),
            sol.gamma3(track_sub)))
        prev = rows[-1]
    return rows
