"""Quadratic eigenvalue pencil, bounded-mode selection and the flux (DtN) map.

Radial solutions U(rho) = exp(gamma rho) w of the homogeneous ODE system solve
the pencil Q(gamma) w = 0 with Q(gamma) = -gamma^2 M_rr + gamma (M_pr - M_rp)
+ M_pp.  Boundedness on rho -> -inf selects Re gamma >= 0; the defective
gamma = 0 cluster is replaced by the two exact translation fields.

Internally conjugate eigenpairs are combined into a real basis W_R with a
block-diagonal propagator E(rho) (1x1 exp(g rho) blocks for real g, 2x2
rotation-scaled blocks for complex pairs), so the coupling system, the flux
matrix and all evaluated fields are real by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .assembly import SemiDiscreteSystem


class SpectralError(RuntimeError):
    pass


def _linearization(sys: SemiDiscreteSystem):
    n = sys.n_dofs
    C = sys.M_pr - sys.M_rp
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = sys.M_pp
    A[n:, n:] = C
    B = np.eye(2 * n)
    B[n:, n:] = sys.M_rr
    return A, B


def solve_pencil(sys: SemiDiscreteSystem):
    """All 4M eigenpairs of the pencil via first-companion linearization.

    Returns (gammas, vectors) with vectors[:, i] the mode shape (top half of
    the companion eigenvector, normalized).  M_rr is mass-like SPD, so the
    companion pencil reduces to a standard eigenproblem (much faster than
    QZ); QZ remains as the fallback.
    """
    n = sys.n_dofs
    try:
        C = sys.M_pr - sys.M_rp
        A = np.zeros((2 * n, 2 * n))
        A[:n, n:] = np.eye(n)
        A[n:, :n] = np.linalg.solve(sys.M_rr, sys.M_pp)
        A[n:, n:] = np.linalg.solve(sys.M_rr, C)
        ev, Z = np.linalg.eig(A)
    except np.linalg.LinAlgError:
        A, B = _linearization(sys)
        try:
            ev, Z = sla.eig(A, B)
        except sla.LinAlgError as exc:  # pragma: no cover
            raise SpectralError(f"QZ failure: {exc}") from exc
    if np.any(~np.isfinite(ev)):
        raise SpectralError("infinite pencil eigenvalues (M_rr singular?)")
    W = Z[:n, :]
    norms = np.linalg.norm(W, axis=0)
    bad = norms < 1e-12
    if np.any(bad):
        # eigenvector concentrated in the gamma*w slot; recover w from there
        W = W.copy()
        W[:, bad] = Z[n:, bad] / ev[bad]
        norms = np.linalg.norm(W, axis=0)
    return ev, W / norms


def pencil_eigenvalues(sys: SemiDiscreteSystem) -> np.ndarray:
    """Eigenvalues only (cheaper; used for gamma tables).

    M_rr is a mass-like SPD block, so the companion pencil reduces to a
    standard eigenvalue problem, which is much faster than QZ.
    """
    n = sys.n_dofs
    C = sys.M_pr - sys.M_rp
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    try:
        A[n:, :n] = np.linalg.solve(sys.M_rr, sys.M_pp)
        A[n:, n:] = np.linalg.solve(sys.M_rr, C)
    except np.linalg.LinAlgError:
        A2, B2 = _linearization(sys)
        return sla.eigvals(A2, B2)
    return sla.eigvals(A)


def gamma3_of(sys: SemiDiscreteSystem, tol_zero_rel: float = 1e-7) -> float:
    """Smallest strictly positive real part of the pencil spectrum."""
    ev = pencil_eigenvalues(sys)
    tol = tol_zero_rel * np.max(np.abs(ev))
    pos = np.real(ev)[np.real(ev) > tol]
    if len(pos) == 0:
        raise SpectralError("no strictly decaying modes found")
    return float(np.min(pos))


@dataclass
class ModalBasis:
    """Selected bounded modes of one subdomain.

    gammas/W hold the 2M complex eigenpairs (translations first); W_real and
    the block structure give the equivalent real basis: blocks is a list of
    (col, gamma) for real modes and (col, a, b) for a complex pair a + ib
    occupying columns col, col + 1.
    """

    gammas: np.ndarray
    W: np.ndarray
    W_real: np.ndarray
    blocks: list
    dtn: Optional[np.ndarray] = None
    cond_W: float = 0.0
    residuals: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.W_real.shape[0]

    @property
    def Wp(self) -> np.ndarray:
        """S'(0) = W diag(gamma)."""
        return self.W * self.gammas[None, :]

    def gamma_matrix(self) -> np.ndarray:
        """Block-diagonal real generator, S_R'(0) = W_real @ Gamma_R."""
        G = np.zeros((self.n, self.n))
        for blk in self.blocks:
            if len(blk) == 2:
                c, g = blk
                G[c, c] = g
            else:
                c, a, b = blk
                G[c:c + 2, c:c + 2] = [[a, b], [-b, a]]
        return G

    def propagate(self, coeffs: np.ndarray, rhos: np.ndarray) -> np.ndarray:
        """E(rho) @ coeffs for an array of rho values; returns (n, n_rho).

        Computes in the dtype of coeffs, so extended-precision coefficient
        vectors propagate without intermediate rounding (the modal basis can
        require strongly cancelling coefficient combinations)."""
        dt = np.result_type(coeffs.dtype, float)
        rhos = np.asarray(rhos, dtype=dt)
        out = np.zeros((self.n, len(rhos)), dtype=dt)
        for blk in self.blocks:
            if len(blk) == 2:
                c, g = blk
                out[c] = np.exp(dt.type(g) * rhos) * coeffs[c]
            else:
                c, a, b = blk
                ea = np.exp(dt.type(a) * rhos)
                cb = np.cos(dt.type(b) * rhos)
                sb = np.sin(dt.type(b) * rhos)
                out[c] = ea * (cb * coeffs[c] + sb * coeffs[c + 1])
                out[c + 1] = ea * (-sb * coeffs[c] + cb * coeffs[c + 1])
        return out

    def gamma3(self, tol_zero_rel: float = 1e-7) -> float:
        tol = tol_zero_rel * max(1.0, np.max(np.abs(self.gammas)))
        pos = np.real(self.gammas)[np.real(self.gammas) > tol]
        return float(np.min(pos))

    def flux_rows(self, sys: SemiDiscreteSystem) -> np.ndarray:
        """H @ W_real = M_rr W_real Gamma + M_rp W_real, formed directly.

        Equals the flux matrix applied to the modal trace columns without
        inverting the (possibly ill-conditioned) mode-shape matrix.
        """
        return (sys.M_rr @ (self.W_real @ self.gamma_matrix())
                + sys.M_rp @ self.W_real)


def select_modes(sys: SemiDiscreteSystem, gammas: np.ndarray, W: np.ndarray,
                 tol_zero_rel: float = 1e-7) -> ModalBasis:
    """Keep the strictly decaying modes and the two exact translation fields.

    The near-zero cluster (algebraic multiplicity 4: two translations plus
    their unbounded log partners) is discarded and replaced by the analytic
    constant nodal fields with gamma = 0.
    """
    n = sys.n_dofs
    scale = np.max(np.abs(gammas))
    tol_zero = tol_zero_rel * scale
    keep = np.real(gammas) > tol_zero
    n_decay = int(np.sum(keep))
    if n_decay + 2 != n:
        near = gammas[np.abs(np.real(gammas)) <= tol_zero]
        raise SpectralError(
            f"mode selection found {n_decay} decaying + 2 translation modes, "
            f"need {n}; near-axis eigenvalues: {np.sort_complex(near)}")
    g_sel = gammas[keep]
    W_sel = W[:, keep]
    order = np.lexsort((np.imag(g_sel), np.real(g_sel)))
    g_sel, W_sel = g_sel[order], W_sel[:, order]
    _repair_degenerate(sys, g_sel, W_sel, scale)

    trans = np.zeros((n, 2))
    trans[0::2, 0] = 1.0
    trans[1::2, 1] = 1.0
    trans /= np.linalg.norm(trans, axis=0)

    gammas_out = np.concatenate([np.zeros(2, complex), g_sel])
    W_out = np.concatenate([trans.astype(complex), W_sel], axis=1)

    W_real = np.empty((n, n))
    blocks = [(0, 0.0), (1, 0.0)]
    W_real[:, 0] = trans[:, 0]
    W_real[:, 1] = trans[:, 1]
    col = 2
    imag_tol = 1e-10 * scale
    consumed = np.zeros(n_decay, dtype=bool)
    for i in range(n_decay):
        if consumed[i]:
            continue
        g, w = g_sel[i], W_sel[:, i]
        consumed[i] = True
        if abs(np.imag(g)) <= imag_tol:
            # rotate the phase so the vector is real
            j = np.argmax(np.abs(w))
            wr = np.real(w * np.exp(-1j * np.angle(w[j])))
            W_real[:, col] = wr / np.linalg.norm(wr)
            blocks.append((col, float(np.real(g))))
            col += 1
        else:
            # find the conjugate partner among the remaining modes
            free = np.nonzero(~consumed)[0]
            if len(free) == 0:
                raise SpectralError(
                    f"unpaired complex eigenvalue {g} in selected spectrum")
            j = free[np.argmin(np.abs(g_sel[free] - np.conj(g)))]
            if abs(g_sel[j] - np.conj(g)) > 1e-6 * scale:
                raise SpectralError(
                    f"unpaired complex eigenvalue {g} in selected spectrum")
            consumed[j] = True
            if np.imag(g) > 0:
                g, w = g_sel[j], W_sel[:, j]
            W_real[:, col] = np.real(w)
            W_real[:, col + 1] = np.imag(w)
            blocks.append((col, float(np.real(g)), float(np.imag(g))))
            col += 2
    if col != n:
        raise SpectralError("real basis construction lost columns")

    resid = _mode_residuals(sys, gammas_out, W_out)
    basis = ModalBasis(gammas_out, W_out, W_real, blocks,
                       cond_W=float(np.linalg.cond(W_real)), residuals=resid)
    if np.max(resid) > 1e-8:
        raise SpectralError(
            f"selected mode residual {np.max(resid):.3e} exceeds 1e-8")
    return basis


def _repair_degenerate(sys: SemiDiscreteSystem, gammas, W, scale: float,
                       tol: float = 1e-9):
    """Replace eigenvectors of multiple real eigenvalues by a null-space basis.

    For a degenerate real eigenvalue the generalized eigensolver may return
    nearly parallel vectors; the SVD null space of Q(gamma) restores a well
    conditioned basis of the eigenspace.  Vectors are modified in place.
    """
    real = np.abs(np.imag(gammas)) <= 1e-10 * scale
    idx = np.nonzero(real)[0]
    i = 0
    while i < len(idx):
        j = i
        while (j + 1 < len(idx)
               and abs(np.real(gammas[idx[j + 1]] - gammas[idx[i]]))
               <= tol * scale):
            j += 1
        if j > i:
            cluster = idx[i:j + 1]
            g = float(np.mean(np.real(gammas[cluster])))
            Q = np.real(sys.pencil(g))
            _, _, Vt = np.linalg.svd(Q)
            W[:, cluster] = Vt[-len(cluster):][::-1].T.astype(complex)
        i = j + 1


def _mode_residuals(sys: SemiDiscreteSystem, gammas, W) -> np.ndarray:
    C = sys.M_pr - sys.M_rp
    R = (-gammas**2 * (sys.M_rr @ W) + gammas * (C @ W) + sys.M_pp @ W)
    nrr = np.linalg.norm(sys.M_rr, "fro")
    nc = np.linalg.norm(C, "fro")
    npp = np.linalg.norm(sys.M_pp, "fro")
    qnorm = np.abs(gammas)**2 * nrr + np.abs(gammas) * nc + npp
    return np.linalg.norm(R, axis=0) / (np.linalg.norm(W, axis=0)
                                        * np.maximum(qnorm, 1e-300))


def dtn(basis: ModalBasis, sys: SemiDiscreteSystem,
        cond_limit: float = 1e12) -> np.ndarray:
    """Flux matrix H = M_rr S'(0) S(0)^{-1} + M_rp mapping traces to fluxes."""
    if basis.cond_W > cond_limit:
        raise SpectralError(
            f"mode-shape matrix condition {basis.cond_W:.2e} exceeds "
            f"{cond_limit:.1e}; refine or rebalance the angular mesh")
    WG = basis.W_real @ basis.gamma_matrix()
    # S'(0) S(0)^{-1} = WG W_real^{-1}
    SpS = np.linalg.solve(basis.W_real.T, WG.T).T
    H = sys.M_rr @ SpS + sys.M_rp
    basis.dtn = H
    return H


def build_basis(sys: SemiDiscreteSystem, tol_zero_rel: float = 1e-7,
                with_dtn: bool = False) -> ModalBasis:
    """Convenience: solve the pencil, select modes, attach the flux matrix."""
    gammas, W = solve_pencil(sys)
    basis = select_modes(sys, gammas, W, tol_zero_rel)
    if with_dtn:
        dtn(basis, sys)
    return basis


def gamma_report(basis: ModalBasis) -> Tuple[np.ndarray, float]:
    """Sorted positive real parts and the leading exponent gamma3."""
    re = np.sort(np.real(basis.gammas))
    return re, basis.gamma3()
