"""Star-shaped subdomains, boundary curves, material sectors and domain decomposition.

Each subdomain is star-shaped with respect to its own singular point and its
boundary is given as a piecewise radius function r(phi) about that point.  The
curvilinear map

    (x, y) = origin + exp(rho) * r(phi) * (cos(phi), sin(phi)),   rho <= 0,

sends the semi-infinite strip (-inf, 0] x [0, 2*pi) onto the subdomain.  All
angles are stored normalized to [0, 2*pi); input specifications may use signed
angles and wrapping intervals.

A subdomain may also be a wedge: its span is a sub-interval [phi_lo, phi_hi]
of total opening less than 2*pi, the two straight rays phi = phi_lo, phi_hi
are lateral boundaries (traction-free in the semi-discretization), and all
angles are kept signed within the span instead of being wrapped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def normalize_angle(phi: float) -> float:
    """Map an angle into [0, 2*pi)."""
    out = math.fmod(phi, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    if out >= TWO_PI:
        out = 0.0
    return out


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError("non-finite coordinates")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class BoundarySegment:
    """One smooth piece of the boundary radius function on [phi_a, phi_b).

    kinds:
      squircle        r(phi) = 1/sqrt(sin^4 phi + cos^4 phi)
      chord           r(phi) = -dist/sin(phi - phi0)  (straight line at distance
                      dist from the origin; dist defaults to 1)
      bump            r(phi) = sqrt(1 + sin^2(2 phi))
      constant        r(phi) = radius
      tabulated       monotone-cubic interpolant of (phi, r) samples
    """

    kind: str
    phi_a: float
    phi_b: float
    phi0: float = 0.0
    dist: float = 1.0
    radius: float = 1.0
    table: Optional[tuple] = None  # (phis, radii) for kind == "tabulated"

    def __post_init__(self):
        if self.kind not in ("squircle", "chord", "bump", "constant", "tabulated"):
            raise ConfigurationError(f"unknown segment kind {self.kind!r}")
        if not self.phi_b > self.phi_a:
            raise ConfigurationError("segment interval must have phi_b > phi_a")
        # reject non-positive radii on the closed interval
        phis = np.linspace(self.phi_a, self.phi_b, 64)
        r, _ = self.evaluate(phis)
        if np.min(r) <= 0.0:
            raise GeometryError(
                f"segment {self.kind} not positive on [{self.phi_a}, {self.phi_b}]"
            )

    def _interp(self) -> PchipInterpolator:
        phis, radii = self.table
        return PchipInterpolator(np.asarray(phis, float), np.asarray(radii, float))

    def evaluate(self, phi):
        """Return (r, dr/dphi) for angles inside this segment's interval."""
        phi = np.asarray(phi, dtype=float)
        if self.kind == "squircle":
            r = 1.0 / np.sqrt(np.sin(phi) ** 4 + np.cos(phi) ** 4)
            rp = 0.5 * np.sin(4.0 * phi) * r**3
        elif self.kind == "chord":
            s = np.sin(phi - self.phi0)
            r = -self.dist / s
            rp = self.dist * np.cos(phi - self.phi0) / s**2
        elif self.kind == "bump":
            r = np.sqrt(1.0 + np.sin(2.0 * phi) ** 2)
            rp = np.sin(4.0 * phi) / r
        elif self.kind == "constant":
            r = np.full_like(phi, self.radius)
            rp = np.zeros_like(phi)
        else:
            f = self._interp()
            r = f(phi)
            rp = f.derivative()(phi)
        return r, rp


@dataclass(frozen=True)
class MaterialSector:
    """Angular sector [theta_lo, theta_hi] with constant Lame coefficients."""

    theta_lo: float
    theta_hi: float
    mu: float
    lam: float

    def __post_init__(self):
        if not self.theta_hi > self.theta_lo:
            raise ConfigurationError("sector must have theta_hi > theta_lo")
        if self.mu <= 0.0 or self.lam <= 0.0:
            raise ConfigurationError("Lame coefficients must be positive")


def _normalized_pieces(lo: float, hi: float) -> list:
    """Split [lo, hi) into non-wrapping pieces inside [0, 2*pi)."""
    if hi - lo > TWO_PI + 1e-12:
        raise ConfigurationError("interval longer than 2*pi")
    lo_n = normalize_angle(lo)
    shift = lo_n - lo
    lo, hi = lo_n, hi + shift
    if hi <= TWO_PI + 1e-12:
        return [(lo, min(hi, TWO_PI))]
    return [(lo, TWO_PI), (0.0, hi - TWO_PI)]


class SubdomainSpec:
    """One star-shaped subdomain: origin, boundary segments and material sectors.

    For a full subdomain (span covering 2*pi) segments and sectors may be
    supplied with signed / wrapping angular intervals; they are normalized so
    that their pieces exactly tile [0, 2*pi).  For a wedge (span narrower than
    2*pi) all angles stay signed and the pieces must tile [phi_lo, phi_hi].
    """

    def __init__(self, origin: Point2, segments: Sequence[BoundarySegment],
                 sectors: Sequence[MaterialSector],
                 span: tuple = (0.0, TWO_PI)):
        self.origin = origin
        self.segments = list(segments)
        self.sectors = list(sectors)
        self.span = (float(span[0]), float(span[1]))
        opening = self.span[1] - self.span[0]
        if not 0.0 < opening <= TWO_PI + 1e-12:
            raise ConfigurationError(f"invalid subdomain span {self.span}")
        self.periodic = abs(opening - TWO_PI) <= 1e-12
        self._seg_pieces = self._tile(
            [(s.phi_a, s.phi_b, s) for s in self.segments], "segments")
        self._sec_pieces = self._tile(
            [(s.theta_lo, s.theta_hi, s) for s in self.sectors], "sectors")
        self._validate()

    def _tile(self, items, what: str):
        if self.periodic:
            pieces = []
            for lo, hi, obj in items:
                for a, b in _normalized_pieces(lo, hi):
                    if b - a > 1e-12:
                        pieces.append((a, b, obj))
            lo_span, hi_span = 0.0, TWO_PI
        else:
            pieces = [(lo, hi, obj) for lo, hi, obj in items]
            lo_span, hi_span = self.span
        pieces.sort(key=lambda t: t[0])
        cursor = lo_span
        for a, b, _ in pieces:
            if abs(a - cursor) > 1e-9:
                raise ConfigurationError(
                    f"{what} do not tile the span: gap/overlap at angle {a}")
            cursor = b
        if abs(cursor - hi_span) > 1e-9:
            raise ConfigurationError(f"{what} do not close the span")
        return pieces

    def _validate(self):
        lo, hi = (0.0, TWO_PI) if self.periodic else self.span
        phis = np.linspace(lo, hi - 1e-9, 720)
        r, _ = self.radius(phis)
        if np.min(r) <= 0.0:
            raise GeometryError("boundary radius not strictly positive")
        if self.periodic:
            r0, _ = self.radius(np.array([0.0]))
            r2, _ = self.radius(np.array([TWO_PI - 1e-12]))
            if abs(r0[0] - r2[0]) > 1e-6 * max(1.0, abs(r0[0])):
                raise GeometryError(
                    "boundary radius not periodic: r(0) != r(2*pi)")

    def into_span(self, phi: float) -> float:
        """Map an angle into this subdomain's angular parameter range."""
        if self.periodic:
            return normalize_angle(phi)
        lo, hi = self.span
        for cand in (phi, phi - TWO_PI, phi + TWO_PI):
            if lo - 1e-9 <= cand <= hi + 1e-9:
                return min(max(cand, lo), hi)
        raise GeometryError(f"angle {phi} outside wedge span {self.span}")

    def _lookup(self, pieces, phi: float):
        phi = self.into_span(phi)
        for a, b, obj in pieces:
            if a - 1e-12 <= phi < b - 1e-12:
                return obj
        return pieces[-1][2]

    def radius(self, phi):
        """Boundary radius and angular derivative, piecewise over the segments."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        r = np.empty_like(phi)
        rp = np.empty_like(phi)
        for i, p in enumerate(phi):
            seg = self._lookup(self._seg_pieces, p)
            # evaluate in the segment's own (possibly signed) parameter range;
            # all closed-form kinds are 2*pi-periodic, so this only matters
            # for tabulated segments
            pn = self.into_span(p)
            best = min((pn, pn - TWO_PI, pn + TWO_PI),
                       key=lambda c: max(seg.phi_a - c, c - seg.phi_b, 0.0))
            ri, rpi = seg.evaluate(np.asarray(best))
            r[i], rp[i] = float(ri), float(rpi)
        return r, rp

    def material(self, phi: float):
        sec = self._lookup(self._sec_pieces, phi)
        return sec.mu, sec.lam

    def breakpoints(self) -> np.ndarray:
        """All angles where segments or sectors change (mesh-mandatory nodes)."""
        if self.periodic:
            pts = {0.0}
            for a, b, _ in self._seg_pieces + self._sec_pieces:
                pts.add(normalize_angle(a))
                pts.add(normalize_angle(b))
            pts.discard(TWO_PI)
        else:
            pts = set(self.span)
            for a, b, _ in self._seg_pieces + self._sec_pieces:
                pts.add(a)
                pts.add(b)
        return np.array(sorted(pts))


def to_cartesian(sub: SubdomainSpec, rho, phi) -> np.ndarray:
    """Map strip coordinates of a subdomain to global Cartesian coordinates."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho > 1e-12):
        raise GeometryError("rho must be <= 0")
    phi = np.asarray(phi, dtype=float)
    r, _ = sub.radius(phi)
    scale = np.exp(rho) * r
    return np.stack([sub.origin.x + scale * np.cos(phi),
                     sub.origin.y + scale * np.sin(phi)], axis=-1)


@dataclass(frozen=True)
class InterfaceSpec:
    """Shared arc between two subdomains, in each subdomain's local frame.

    closed_* flags state whether the arc endpoint node participates in the
    interface pairing (True) or is left to the exterior Dirichlet boundary /
    another interface (False).
    """

    sub_a: int
    sub_b: int
    arc_a: tuple  # (phi_lo, phi_hi) in sub_a's local frame
    arc_b: tuple
    closed_a: tuple = (False, False)
    closed_b: tuple = (False, False)


class DecomposedDomain:
    def __init__(self, subdomains: Sequence[SubdomainSpec],
                 interfaces: Sequence[InterfaceSpec], tol: Optional[float] = None):
        self.subdomains = list(subdomains)
        self.interfaces = list(interfaces)
        self.tol = tol if tol is not None else 1e-9 * self.diameter()
        self._check_interfaces()

    def diameter(self) -> float:
        pts = []
        for sub in self.subdomains:
            lo, hi = (0.0, TWO_PI) if sub.periodic else sub.span
            phis = np.linspace(lo, hi, 256)
            pts.append(to_cartesian(sub, np.zeros_like(phis), phis))
        pts = np.concatenate(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def _check_interfaces(self):
        for itf in self.interfaces:
            sa, sb = self.subdomains[itf.sub_a], self.subdomains[itf.sub_b]
            ta = np.linspace(itf.arc_a[0], itf.arc_a[1], 33)
            pa = to_cartesian(sa, np.zeros_like(ta), ta)
            tb = np.linspace(itf.arc_b[0], itf.arc_b[1], 33)
            pb = to_cartesian(sb, np.zeros_like(tb), tb)
            # arcs may be traversed in opposite directions
            d_fwd = np.max(np.hypot(*(pa - pb).T))
            d_rev = np.max(np.hypot(*(pa - pb[::-1]).T))
            if min(d_fwd, d_rev) > max(self.tol, 1e-7):
                raise GeometryError(
                    f"interface ({itf.sub_a},{itf.sub_b}) arcs do not coincide "
                    f"(max deviation {min(d_fwd, d_rev):.3e})")


@dataclass
class AngularMesh:
    """Angular finite-element mesh of one subdomain.

    nodes: M+1 strictly increasing vertex angles spanning the subdomain's
    angular range.  For a periodic mesh nodes[0] = 0, nodes[-1] = 2*pi and the
    first and last vertex are identified; for a wedge the two end vertices are
    distinct degrees of freedom.  For p = 2 each element also carries a
    midpoint node; dof_angles lists all node angles in global dof order
    (vertex0, [mid0,] vertex1, ...), without the periodic duplicate.
    """

    subdomain: int
    nodes: np.ndarray
    order: int = 1
    periodic: bool = True

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ConfigurationError("element order must be 1 or 2")
        d = np.diff(self.nodes)
        if np.any(d <= 0):
            raise ConfigurationError("mesh nodes must be strictly increasing")

    @property
    def n_elements(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_nodes(self) -> int:
        n = self.order * self.n_elements
        return n if self.periodic else n + 1

    @property
    def dof_angles(self) -> np.ndarray:
        if self.order == 1:
            return self.nodes if not self.periodic else self.nodes[:-1]
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        out = np.empty(self.n_nodes)
        out[0::2] = self.nodes if not self.periodic else self.nodes[:-1]
        out[1::2] = mids
        return out

    def element_nodes(self, e: int) -> np.ndarray:
        """Global node indices of element e, in local basis order."""
        n = self.order * self.n_elements
        if self.order == 1:
            last = e + 1 if not self.periodic else (e + 1) % n
            return np.array([e, last])
        last = 2 * e + 2 if not self.periodic else (2 * e + 2) % n
        return np.array([2 * e, 2 * e + 1, last])


def build_angular_mesh(sub: SubdomainSpec, subdomain_id: int, M: int,
                       extra_mandatory: Sequence[float] = (),
                       p: int = 1) -> AngularMesh:
    """Mesh the subdomain's angular span with M elements whose vertex set
    contains all mandatory angles (sector and segment breakpoints plus
    interface-arc endpoints); remaining vertices are distributed
    quasi-uniformly."""
    mand = set(np.round(sub.breakpoints(), 12))
    for a in extra_mandatory:
        mand.add(round(sub.into_span(a), 12))
    span_lo, span_hi = (0.0, TWO_PI) if sub.periodic else sub.span
    mand.add(round(span_lo, 12))
    mand.discard(round(span_hi, 12))
    mand = sorted(mand)
    gaps = np.diff(mand + [span_hi])
    n_gaps = len(gaps)
    if M < n_gaps:
        raise ConfigurationError(
            f"M={M} smaller than the {n_gaps} mandatory intervals")
    # proportional allocation of elements to gaps (largest remainder)
    quota = gaps / (span_hi - span_lo) * M
    alloc = np.maximum(1, np.floor(quota).astype(int))
    while alloc.sum() > M:
        i = np.argmax(np.where(alloc > 1, alloc - quota, -np.inf))
        alloc[i] -= 1
    while alloc.sum() < M:
        i = np.argmax(quota - alloc)
        alloc[i] += 1
    nodes = []
    for i, lo in enumerate(mand):
        hi = mand[i + 1] if i + 1 < len(mand) else span_hi
        k = alloc[i]
        nodes.extend(lo + (hi - lo) * np.arange(k) / k)
    nodes.append(span_hi)
    return AngularMesh(subdomain_id, np.array(nodes), order=p,
                       periodic=sub.periodic)


def match_interfaces(domain: DecomposedDomain, meshes: Sequence[AngularMesh],
                     tol: Optional[float] = None) -> list:
    """Pair interface nodes across subdomains by nearest Cartesian position.

    Returns one (idx_a, idx_b) pair of node-index arrays per interface, such
    that node idx_a[i] of sub_a coincides with node idx_b[i] of sub_b within
    tol.  Arc endpoints participate only where the closed_* flag is set.
    """
    tol = tol if tol is not None else domain.tol
    pairings = []
    for itf in domain.interfaces:
        ia = _arc_nodes(meshes[itf.sub_a], itf.arc_a, itf.closed_a)
        ib = _arc_nodes(meshes[itf.sub_b], itf.arc_b, itf.closed_b)
        if len(ia) != len(ib):
            raise GeometryError(
                f"interface ({itf.sub_a},{itf.sub_b}): {len(ia)} vs {len(ib)} "
                "nodes on the two sides")
        sa = domain.subdomains[itf.sub_a]
        sb = domain.subdomains[itf.sub_b]
        pa = to_cartesian(sa, 0.0, meshes[itf.sub_a].dof_angles[ia])
        pb = to_cartesian(sb, 0.0, meshes[itf.sub_b].dof_angles[ib])
        order = np.empty(len(ia), dtype=int)
        used = np.zeros(len(ib), dtype=bool)
        for i, p in enumerate(pa):
            d = np.hypot(*(pb - p).T)
            d[used] = np.inf
            j = int(np.argmin(d))
            if d[j] > max(tol, 1e-9):
                raise GeometryError(
                    f"interface ({itf.sub_a},{itf.sub_b}): node at angle "
                    f"{meshes[itf.sub_a].dof_angles[ia[i]]:.6f} unmatched "
                    f"(nearest distance {d[j]:.3e})")
            order[i] = j
            used[j] = True
        pairings.append((ia, ib[order]))
    return pairings


def _arc_nodes(mesh: AngularMesh, arc, closed) -> np.ndarray:
    lo, hi = arc
    angles = mesh.dof_angles
    eps = 1e-9
    out = []
    for idx, a in enumerate(angles):
        for cand in (a, a - TWO_PI, a + TWO_PI):
            if lo - eps <= cand <= hi + eps:
                at_lo = abs(cand - lo) <= eps
                at_hi = abs(cand - hi) <= eps
                if (at_lo and not closed[0]) or (at_hi and not closed[1]):
                    break
                out.append(idx)
                break
    return np.array(sorted(out), dtype=int)


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------

def _segment_from_json(d: dict) -> BoundarySegment:
    params = d.get("params", {})
    return BoundarySegment(
        kind=d["kind"], phi_a=float(d["phi_a"]), phi_b=float(d["phi_b"]),
        phi0=float(params.get("phi0", 0.0)), dist=float(params.get("dist", 1.0)),
        radius=float(params.get("radius", 1.0)),
        table=(tuple(params["phi"]), tuple(params["r"]))
        if d["kind"] == "tabulated" else None)


def subdomain_from_json(d: dict) -> SubdomainSpec:
    origin = Point2(*[float(v) for v in d["origin"]])
    segments = [_segment_from_json(s) for s in d["segments"]]
    sectors = [MaterialSector(float(s["theta_lo"]), float(s["theta_hi"]),
                              float(s["mu"]), float(s["lambda"]))
               for s in d["sectors"]]
    span = tuple(float(v) for v in d.get("span", (0.0, TWO_PI)))
    return SubdomainSpec(origin, segments, sectors, span=span)


def domain_from_json(d: dict) -> DecomposedDomain:
    subs = [subdomain_from_json(s) for s in d["subdomains"]]
    itfs = [InterfaceSpec(
        sub_a=int(i["a"]), sub_b=int(i["b"]),
        arc_a=tuple(float(v) for v in i["arc_a"]),
        arc_b=tuple(float(v) for v in i["arc_b"]),
        closed_a=tuple(bool(v) for v in i.get("closed_a", (False, False))),
        closed_b=tuple(bool(v) for v in i.get("closed_b", (False, False))))
        for i in d.get("interfaces", [])]
    return DecomposedDomain(subs, itfs)


def load_domain(path: str) -> DecomposedDomain:
    with open(path) as f:
        return domain_from_json(json.load(f))
