"""Reconstruction of piecewise-constant Lame fields from displacement data.

The unknowns are per-subdomain angular cell values (mu_j, lambda_j), j = 1..m',
constant along rho.  The smoothed objective

    J_nu = J_0 + eta (TV_nu(mu) + TV_nu(lambda)),
    J_0  = 1/2 sum_k iint 2 mu |eps(u - z)|^2 + lambda |div(u - z)|^2
           e^{2 rho} r^2 dphi drho,

is minimized with the Adam iteration; each evaluation solves a forward problem
with the current cells as material sectors.  The measurement z is stored as
noisy nodal traces plus grid samples and differentiated through a modal
interpolant (least-squares trace fit, built once), which keeps the analytic
cell gradients

    dJ0/dmu_j    = - iint_cell (|eps(u)|^2 - |eps(z)|^2) e^{2 rho} r^2,
    dJ0/dlam_j   = - 1/2 iint_cell (div(u)^2 - div(z)^2) e^{2 rho} r^2,

consistent with finite differences of J_0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (ConfigurationError, DecomposedDomain, MaterialSector,
                       SubdomainSpec, build_angular_mesh, match_interfaces)
from .forward import (BoundaryData, ForwardSolution, SolverError,
                      phi_quadrature, rho_quadrature, solve_forward)


# ---------------------------------------------------------------------------
# parameter field
# ---------------------------------------------------------------------------

@dataclass
class ParamField:
    """Piecewise-constant (mu, lambda) cells per subdomain with box bounds."""

    edges: List[np.ndarray]   # per subdomain: m'+1 cell edges spanning the span
    mu: List[np.ndarray]      # per subdomain: m' values
    lam: List[np.ndarray]
    c1: float = 1e-2
    c2: float = 1e2

    def __post_init__(self):
        for e, m, l in zip(self.edges, self.mu, self.lam):
            if len(e) != len(m) + 1 or len(m) != len(l):
                raise ConfigurationError("cell edge/value count mismatch")

    @classmethod
    def constant(cls, domain: DecomposedDomain, m_prime: int,
                 mu0: float, lam0: float, c1: float = 1e-2,
                 c2: float = 1e2) -> "ParamField":
        edges, mu, lam = [], [], []
        for sub in domain.subdomains:
            lo, hi = (0.0, 2.0 * math.pi) if sub.periodic else sub.span
            edges.append(np.linspace(lo, hi, m_prime + 1))
            mu.append(np.full(m_prime, float(mu0)))
            lam.append(np.full(m_prime, float(lam0)))
        return cls(edges, mu, lam, c1, c2)

    @property
    def n_subs(self) -> int:
        return len(self.edges)

    def admissible(self) -> bool:
        return all(np.all((v >= self.c1) & (v <= self.c2))
                   for v in self.mu + self.lam)

    def clamped(self) -> "ParamField":
        return replace(self,
                       mu=[np.clip(v, self.c1, self.c2) for v in self.mu],
                       lam=[np.clip(v, self.c1, self.c2) for v in self.lam])

    def vectors(self) -> List[np.ndarray]:
        """Per-subdomain stacked unknown vector (mu_1..m', lam_1..m')."""
        return [np.concatenate([m, l]) for m, l in zip(self.mu, self.lam)]

    def with_vectors(self, vs: Sequence[np.ndarray]) -> "ParamField":
        mu, lam = [], []
        for v, e in zip(vs, self.edges):
            m = len(e) - 1
            mu.append(np.asarray(v[:m], dtype=float).copy())
            lam.append(np.asarray(v[m:], dtype=float).copy())
        return replace(self, mu=mu, lam=lam)

    def sectors(self, k: int) -> List[MaterialSector]:
        e = self.edges[k]
        return [MaterialSector(e[j], e[j + 1],
                               float(self.mu[k][j]), float(self.lam[k][j]))
                for j in range(len(e) - 1)]

    def apply_to(self, domain: DecomposedDomain) -> DecomposedDomain:
        """The same geometry with this field's cells as material sectors."""
        subs = [SubdomainSpec(s.origin, s.segments, self.sectors(k),
                              span=s.span)
                for k, s in enumerate(domain.subdomains)]
        return DecomposedDomain(subs, domain.interfaces)


def l1_errors(field_h: ParamField, truth: DecomposedDomain
              ) -> Tuple[float, float]:
    """Relative L1(phi) errors of the cell fields against sector ground truth,
    with cells split exactly at the true sector boundaries."""
    num_mu = den_mu = num_lam = den_lam = 0.0
    for k, sub in enumerate(truth.subdomains):
        cuts = np.unique(np.concatenate(
            [field_h.edges[k],
             [sub.into_span(b) for b in sub.breakpoints()]]))
        e = field_h.edges[k]
        cuts = cuts[(cuts >= e[0] - 1e-12) & (cuts <= e[-1] + 1e-12)]
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a < 1e-14:
                continue
            mid = 0.5 * (a + b)
            j = min(np.searchsorted(e, mid) - 1, len(e) - 2)
            mu_t, lam_t = sub.material(mid)
            w = b - a
            num_mu += w * abs(field_h.mu[k][j] - mu_t)
            den_mu += w * abs(mu_t)
            num_lam += w * abs(field_h.lam[k][j] - lam_t)
            den_lam += w * abs(lam_t)
    return num_mu / den_mu, num_lam / den_lam


# ---------------------------------------------------------------------------
# problem setup and measurement
# ---------------------------------------------------------------------------

@dataclass
class InverseProblem:
    """Fixed context of one inversion: geometry, data, grids and resolutions."""

    domain: DecomposedDomain          # geometry carrier (sectors unused)
    f: BoundaryData
    force_spec: Optional[tuple]
    m_prime: int
    M: int
    p: int = 1
    rho_min: float = -18.0

    def __post_init__(self):
        probe = ParamField.constant(self.domain, self.m_prime, 1.0, 1.0)
        dom0 = probe.apply_to(self.domain)
        endpoints = [[] for _ in dom0.subdomains]
        for itf in dom0.interfaces:
            endpoints[itf.sub_a].extend(itf.arc_a)
            endpoints[itf.sub_b].extend(itf.arc_b)
        # the mesh must resolve every cell edge; grow M to the feasible minimum
        self.meshes = []
        self.M_eff = self.M
        for k, sub in enumerate(dom0.subdomains):
            lo, hi = (0.0, 2.0 * math.pi) if sub.periodic else sub.span
            mand = {round(b, 12) for b in sub.breakpoints()}
            mand |= {round(sub.into_span(a), 12) for a in endpoints[k]}
            mand.add(round(lo, 12))
            mand.discard(round(hi, 12))
            self.M_eff = max(self.M_eff, len(mand))
        for k, sub in enumerate(dom0.subdomains):
            self.meshes.append(
                build_angular_mesh(sub, k, self.M_eff, endpoints[k], self.p))
        self.rho_q, self.rho_w = rho_quadrature(self.rho_min)
        self.phi_q, self.phi_w, self.cell_of, self.rt = [], [], [], []
        for k, mesh in enumerate(self.meshes):
            pq, pw = phi_quadrature(mesh.nodes)
            self.phi_q.append(pq)
            self.phi_w.append(pw)
            e = probe.edges[k]
            self.cell_of.append(
                np.clip(np.searchsorted(e, pq) - 1, 0, len(e) - 2))
            r, _ = dom0.subdomains[k].radius(pq)
            self.rt.append(r)
        self.edges = probe.edges
        self.pairings = match_interfaces(dom0, self.meshes)
        self.dirichlet_nodes = []
        for k, mesh in enumerate(self.meshes):
            claimed = np.zeros(mesh.n_nodes, dtype=bool)
            for itf, (ia, ib) in zip(dom0.interfaces, self.pairings):
                if itf.sub_a == k:
                    claimed[ia] = True
                if itf.sub_b == k:
                    claimed[ib] = True
            self.dirichlet_nodes.append(np.nonzero(~claimed)[0])

    def constant_field(self, mu0: float, lam0: float,
                       c1: float = 1e-2, c2: float = 1e2) -> ParamField:
        return ParamField.constant(self.domain, self.m_prime, mu0, lam0,
                                   c1, c2)

    def solve(self, fld: ParamField) -> ForwardSolution:
        return solve_forward(fld.apply_to(self.domain), self.M_eff, self.f,
                             self.force_spec, p=self.p)

    def area_weights(self, k: int) -> np.ndarray:
        """(n_phi, n_rho) quadrature weights of the Cartesian area element."""
        return (self.phi_w[k][:, None] * self.rho_w[None, :]
                * np.exp(2.0 * self.rho_q)[None, :]
                * (self.rt[k] ** 2)[:, None])


@dataclass
class Measurement:
    """Noisy displacement data: nodal boundary traces and grid samples."""

    traces: List[np.ndarray]          # per subdomain, length 2 n_nodes
    grid: List[np.ndarray]            # per subdomain, (n_phi, 2, n_rho)
    delta: float
    seed: int
    u_inf: float
    z_solution: Optional[ForwardSolution] = None   # modal interpolant (cached)
    _z_grids: Optional[list] = None

    def interpolant(self, sol: ForwardSolution) -> ForwardSolution:
        """Modal representation of the traces, built once (first call) from
        the supplied forward solution's bases and reused afterwards."""
        if self.z_solution is None:
            alphas = []
            for k, bun in enumerate(sol.bundles):
                rhs = self.traces[k] - bun.w_p
                alpha, *_ = np.linalg.lstsq(bun.basis.W_real, rhs, rcond=None)
                alphas.append(alpha)
            self.z_solution = ForwardSolution(sol.domain, sol.bundles,
                                              alphas, 0.0)
            self._z_grids = None
        return self.z_solution

    def z_grad(self, k: int, prob: InverseProblem) -> np.ndarray:
        """Cached Cartesian gradient of the interpolated z on the grid."""
        if self.z_solution is None:
            raise SolverError("measurement interpolant not built yet")
        if self._z_grids is None:
            self._z_grids = [None] * len(self.traces)
        if self._z_grids[k] is None:
            _, gz = self.z_solution.eval_grid(k, prob.phi_q[k], prob.rho_q)
            self._z_grids[k] = gz
        return self._z_grids[k]


def synthesize_measurement(prob: InverseProblem, truth: DecomposedDomain,
                           delta: float, seed: int,
                           M_ref: Optional[int] = None,
                           p_ref: Optional[int] = None) -> Measurement:
    """Sample a reference solution on the inversion grids and add uniform
    noise delta * xi * ||u||_inf.

    By default the reference uses the same resolution as the inversion, so
    the data grid matches the forward configuration used in the objective.
    The prescribed Dirichlet data is known exactly, so exterior boundary
    nodes keep it; an interface node is one physical point, so the paired
    nodes share a single noisy value.  The measurement also carries a modal
    representation of z used to differentiate z in the objective: the noisy
    nodal traces are fit (least squares at rho = 0) in the modal basis of
    the truth field projected onto the inversion cells, so that z lies in
    the same semi-discrete space as the forward iterates and the analytic
    cell gradients match finite differences of the objective.
    """
    if M_ref is None:
        M_ref = prob.M_eff
    if p_ref is None:
        p_ref = prob.p
    ref = solve_forward(truth, M_ref, prob.f, prob.force_spec, p=p_ref)
    grids, traces = [], []
    u_inf = 0.0
    for k in range(len(truth.subdomains)):
        u, _ = ref.eval_grid(k, prob.phi_q[k], prob.rho_q, need_grad=False)
        grids.append(u)
        tr, _ = ref.eval_grid(k, prob.meshes[k].dof_angles,
                              np.array([0.0]), need_grad=False)
        traces.append(tr[:, :, 0].ravel())
        u_inf = max(u_inf, float(np.max(np.abs(u))))
    rng = np.random.default_rng(seed)
    amp = delta * u_inf
    grids = [g + amp * rng.uniform(-1.0, 1.0, g.shape) for g in grids]
    traces = [t + amp * rng.uniform(-1.0, 1.0, t.shape) for t in traces]
    # exterior boundary nodes: prescribed data, not measured
    for k, mesh in enumerate(prob.meshes):
        free = prob.dirichlet_nodes[k]
        if len(free) == 0:
            continue
        angles = mesh.dof_angles[free]
        sub = truth.subdomains[k]
        from .geometry import to_cartesian
        fv = prob.f(to_cartesian(sub, np.zeros_like(angles), angles))
        for j, val in zip(free, fv):
            traces[k][2 * j:2 * j + 2] = val
    # paired interface nodes: one physical point, one noise draw
    for itf, (ia, ib) in zip(prob.domain.interfaces, prob.pairings):
        a, b = itf.sub_a, itf.sub_b
        for ja, jb in zip(ia, ib):
            traces[b][2 * jb:2 * jb + 2] = traces[a][2 * ja:2 * ja + 2]
    # modal representation of z: least-squares trace fit at rho = 0 in the
    # basis of the truth field projected onto the inversion cells (the
    # finest material the cell grid can represent), extended modally
    proj = prob.constant_field(1.0, 1.0)
    for k, sub in enumerate(truth.subdomains):
        e = proj.edges[k]
        mids = 0.5 * (e[:-1] + e[1:])
        vals = [sub.material(m) for m in mids]
        proj.mu[k] = np.array([v[0] for v in vals])
        proj.lam[k] = np.array([v[1] for v in vals])
    base = prob.solve(proj)
    alphas = []
    for k, bun in enumerate(base.bundles):
        alpha, *_ = np.linalg.lstsq(bun.basis.W_real, traces[k] - bun.w_p,
                                    rcond=None)
        alphas.append(alpha)
    z_sol = ForwardSolution(base.domain, base.bundles, alphas, 0.0)
    return Measurement(traces, grids, delta, seed, u_inf, z_solution=z_sol)


# ---------------------------------------------------------------------------
# objective and gradient
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveReport:
    J_nu: float
    J0: float
    tv_mu: float
    tv_lam: float
    grads: Optional[List[np.ndarray]] = None


def _strain_invariants(grad):
    """(|eps|_F^2, div) from a Cartesian gradient grid (p, c, i, r)."""
    e11 = grad[:, 0, 0, :]
    e22 = grad[:, 1, 1, :]
    e12 = 0.5 * (grad[:, 0, 1, :] + grad[:, 1, 0, :])
    return e11**2 + e22**2 + 2.0 * e12**2, e11 + e22


def tv_smooth(values: np.ndarray, r_edges: np.ndarray, nu: float,
              periodic: bool) -> float:
    """TV_nu = sum over cell edges of r(phi_edge) sqrt(jump^2 + nu^2)."""
    if periodic:
        jumps = np.roll(values, -1) - values
        r = r_edges[1:]
    else:
        jumps = values[1:] - values[:-1]
        r = r_edges[1:-1]
    return float(np.sum(r * np.sqrt(jumps**2 + nu**2)))


def tv_smooth_grad(values: np.ndarray, r_edges: np.ndarray, nu: float,
                   periodic: bool) -> np.ndarray:
    g = np.zeros_like(values)
    if periodic:
        jumps = np.roll(values, -1) - values
        t = r_edges[1:] * jumps / np.sqrt(jumps**2 + nu**2)
        g -= t
        g += np.roll(t, 1)
    else:
        jumps = values[1:] - values[:-1]
        t = r_edges[1:-1] * jumps / np.sqrt(jumps**2 + nu**2)
        g[:-1] -= t
        g[1:] += t
    return g


def eval_objective(prob: InverseProblem, fld: ParamField, meas: Measurement,
                   eta: float = 1e-7, nu: float = 1e-7,
                   with_grad: bool = False
                   ) -> Tuple[ObjectiveReport, ForwardSolution]:
    """J_nu at the field, with the forward solution (and gradients if asked)."""
    sol = prob.solve(fld)
    meas.interpolant(sol)
    J0 = 0.0
    tv_mu = tv_lam = 0.0
    grads = [] if with_grad else None
    for k in range(fld.n_subs):
        _, gu = sol.eval_grid(k, prob.phi_q[k], prob.rho_q)
        gz = meas.z_grad(k, prob)
        w = prob.area_weights(k)
        cells = prob.cell_of[k]
        mu_q = fld.mu[k][cells]
        lam_q = fld.lam[k][cells]
        eps2_d, div_d = _strain_invariants(gu - gz)
        J0 += 0.5 * float(np.sum(w * (2.0 * mu_q[:, None] * eps2_d
                                      + lam_q[:, None] * div_d**2)))
        sub = prob.domain.subdomains[k]
        r_edges, _ = sub.radius(prob.edges[k])
        tv_mu += tv_smooth(fld.mu[k], r_edges, nu, sub.periodic)
        tv_lam += tv_smooth(fld.lam[k], r_edges, nu, sub.periodic)
        if with_grad:
            eps2_u, div_u = _strain_invariants(gu)
            eps2_z, div_z = _strain_invariants(gz)
            dmu_q = -np.sum(w * (eps2_u - eps2_z), axis=1)
            dlam_q = -0.5 * np.sum(w * (div_u**2 - div_z**2), axis=1)
            m = len(prob.edges[k]) - 1
            dmu = np.zeros(m)
            dlam = np.zeros(m)
            np.add.at(dmu, cells, dmu_q)
            np.add.at(dlam, cells, dlam_q)
            dmu += eta * tv_smooth_grad(fld.mu[k], r_edges, nu, sub.periodic)
            dlam += eta * tv_smooth_grad(fld.lam[k], r_edges, nu, sub.periodic)
            grads.append(np.concatenate([dmu, dlam]))
    J_nu = J0 + eta * (tv_mu + tv_lam)
    return ObjectiveReport(J_nu, J0, tv_mu, tv_lam, grads), sol


def grad_objective(prob: InverseProblem, fld: ParamField,
                   meas: Measurement, eta: float = 1e-7,
                   nu: float = 1e-7) -> List[np.ndarray]:
    """Per-subdomain gradient vectors (dJ/dmu_1..m', dJ/dlam_1..m')."""
    report, _ = eval_objective(prob, fld, meas, eta, nu, with_grad=True)
    return report.grads


# ---------------------------------------------------------------------------
# Adam iteration
# ---------------------------------------------------------------------------

@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    eta: float = 1e-7
    nu: float = 1e-7
    tol: float = 5e-6
    max_iter: int = 1000
    tau0: float = 5e-3
    tau_decay: float = 0.995

    def tau(self, t: int) -> float:
        return self.tau0 * self.tau_decay**t


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, fld: ParamField) -> "AdamState":
        return cls([np.zeros_like(v) for v in fld.vectors()],
                   [np.zeros_like(v) for v in fld.vectors()], 0)


def adam_step(state: AdamState, grads: Sequence[np.ndarray],
              fld: ParamField, cfg: AdamConfig
              ) -> Tuple[AdamState, ParamField]:
    """One bias-corrected Adam update with box clamping."""
    b1, b2 = cfg.beta1, cfg.beta2
    t = state.t
    tau = cfg.tau(t)
    new_m, new_v, new_vecs = [], [], []
    for mk, vk, gk, xk in zip(state.m, state.v, grads, fld.vectors()):
        m1 = b1 * mk + (1.0 - b1) * gk
        v1 = b2 * vk + (1.0 - b2) * gk * gk
        mh = m1 / (1.0 - b1**(t + 1))
        vh = v1 / (1.0 - b2**(t + 1))
        new_m.append(m1)
        new_v.append(v1)
        new_vecs.append(xk - tau * mh / (np.sqrt(vh) + cfg.eps))
    return (AdamState(new_m, new_v, t + 1),
            fld.with_vectors(new_vecs).clamped())


@dataclass
class InversionResult:
    field: ParamField
    J_history: List[float]
    n_iter: int
    converged: bool
    err_mu: Optional[float] = None
    err_lam: Optional[float] = None


def run_inversion(prob: InverseProblem, meas: Measurement,
                  init: ParamField, cfg: Optional[AdamConfig] = None,
                  truth: Optional[DecomposedDomain] = None,
                  callback=None) -> InversionResult:
    """Adam loop with the relative-decrease stopping rule."""
    cfg = cfg or AdamConfig()
    fld = init.clamped()
    state = AdamState.zeros(fld)
    report, _ = eval_objective(prob, fld, meas, cfg.eta, cfg.nu,
                               with_grad=True)
    history = [report.J_nu]
    converged = False
    while state.t < cfg.max_iter:
        state, fld = adam_step(state, report.grads, fld, cfg)
        report, _ = eval_objective(prob, fld, meas, cfg.eta, cfg.nu,
                                   with_grad=True)
        history.append(report.J_nu)
        if callback is not None:
            callback(state.t, fld, report)
        rel = abs(history[-1] - history[-2]) / max(abs(history[-2]), 1e-300)
        if rel <= cfg.tol:
            converged = True
            break
    res = InversionResult(fld, history, state.t, converged)
    if truth is not None:
        res.err_mu, res.err_lam = l1_errors(fld, truth)
    return res
