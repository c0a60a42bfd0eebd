import math

import numpy as np
import pytest

from starelast.geometry import (BoundarySegment, ConfigurationError,
                                GeometryError, MaterialSector, Point2,
                                SubdomainSpec, build_angular_mesh,
                                domain_from_json, match_interfaces,
                                to_cartesian)

PI = math.pi


def make_disk(r=1.0, mu=1.0, lam=1.5):
    return SubdomainSpec(
        Point2(0.0, 0.0),
        [BoundarySegment("constant", 0.0, 2 * PI, radius=r)],
        [MaterialSector(0.0, 2 * PI, mu, lam)])


class TestSegments:
    def test_chord_points_lie_on_line(self):
        # r(phi) = -dist/sin(phi - phi0) parameterizes the straight line
        # whose unit normal is (sin phi0, -cos phi0) at distance dist
        phi0, dist = 0.7, 1.3
        seg = BoundarySegment("chord", phi0 + 1.1 * PI, phi0 + 1.9 * PI,
                              phi0=phi0, dist=dist)
        phis = np.linspace(seg.phi_a + 0.01, seg.phi_b - 0.01, 25)
        r, _ = seg.evaluate(phis)
        x = r * np.cos(phis)
        y = r * np.sin(phis)
        proj = x * math.sin(phi0) - y * math.cos(phi0)
        assert np.allclose(proj, dist, atol=1e-12)

    def test_chord_derivative_matches_fd(self):
        seg = BoundarySegment("chord", 2.5, 4.5, phi0=-1.0, dist=0.8)
        phis = np.linspace(2.55, 4.45, 9)
        r, rp = seg.evaluate(phis)
        h = 1e-6
        fd = (seg.evaluate(phis + h)[0] - seg.evaluate(phis - h)[0]) / (2 * h)
        assert np.allclose(rp, fd, rtol=1e-6, atol=1e-8)

    def test_squircle_radius_range(self):
        seg = BoundarySegment("squircle", 0.0, 2 * PI)
        phis = np.linspace(0.0, 2 * PI, 200)
        r, _ = seg.evaluate(phis)
        assert np.allclose(r, 1.0 / np.sqrt(np.sin(phis) ** 4
                                            + np.cos(phis) ** 4))
        assert np.min(r) >= 1.0 - 1e-12
        assert np.max(r) <= math.sqrt(2.0) + 1e-12

    def test_bump_formula(self):
        seg = BoundarySegment("bump", -1.0, 1.0)
        phis = np.linspace(-0.9, 0.9, 11)
        r, _ = seg.evaluate(phis)
        assert np.allclose(r, np.sqrt(1.0 + np.sin(2 * phis) ** 2))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            BoundarySegment("ellipse", 0.0, 1.0)

    def test_nonpositive_radius_rejected(self):
        # the chord r = -dist/sin(phi - phi0) is negative for phi above phi0
        with pytest.raises(GeometryError):
            BoundarySegment("chord", 0.1, 0.5, phi0=0.0, dist=1.0)

    def test_empty_interval_rejected(self):
        with pytest.raises(ConfigurationError):
            BoundarySegment("bump", 1.0, 1.0)


class TestSubdomain:
    def test_periodic_radius_wraps(self):
        sub = make_disk(2.0)
        r1, _ = sub.radius(np.array([0.3]))
        r2, _ = sub.radius(np.array([0.3 + 2 * PI]))
        assert r1 == pytest.approx(2.0)
        assert r1 == pytest.approx(r2)

    def test_material_lookup(self):
        sub = SubdomainSpec(
            Point2(0.0, 0.0),
            [BoundarySegment("constant", 0.0, 2 * PI, radius=1.0)],
            [MaterialSector(0.0, PI, 0.4, 1.0),
             MaterialSector(PI, 2 * PI, 0.6, 1.5)])
        assert sub.material(0.5) == (0.4, 1.0)
        assert sub.material(PI + 0.5) == (0.6, 1.5)

    def test_wedge_span_and_lookup(self):
        sub = SubdomainSpec(
            Point2(0.0, 0.0),
            [BoundarySegment("constant", -PI / 2, PI, radius=1.0)],
            [MaterialSector(-PI / 2, 0.0, 0.4, 1.0),
             MaterialSector(0.0, PI, 0.6, 1.5)],
            span=(-PI / 2, PI))
        assert not sub.periodic
        assert sub.material(-0.3) == (0.4, 1.0)
        # angles are mapped into the span modulo 2 pi
        assert sub.into_span(-0.25 + 2 * PI) == pytest.approx(-0.25)
        with pytest.raises(GeometryError):
            sub.into_span(-0.6 * PI)

    def test_wedge_breakpoints_include_span_ends(self):
        sub = SubdomainSpec(
            Point2(0.0, 0.0),
            [BoundarySegment("constant", 0.0, 1.5 * PI, radius=1.0)],
            [MaterialSector(0.0, 0.75 * PI, 0.4, 1.0),
             MaterialSector(0.75 * PI, 1.5 * PI, 0.6, 1.5)],
            span=(0.0, 1.5 * PI))
        bp = sub.breakpoints()
        assert bp[0] == pytest.approx(0.0)
        assert bp[-1] == pytest.approx(1.5 * PI)
        assert any(abs(b - 0.75 * PI) < 1e-12 for b in bp)

    def test_to_cartesian_origin_shift(self):
        sub = SubdomainSpec(
            Point2(1.0, -2.0),
            [BoundarySegment("constant", 0.0, 2 * PI, radius=3.0)],
            [MaterialSector(0.0, 2 * PI, 1.0, 1.0)])
        xy = to_cartesian(sub, np.array([0.0]), np.array([0.0]))
        assert np.allclose(xy, [[4.0, -2.0]])


class TestAngularMesh:
    def test_periodic_node_count(self):
        sub = make_disk()
        mesh = build_angular_mesh(sub, 0, 16, [], 1)
        assert mesh.periodic
        assert mesh.n_elements == 16
        assert mesh.n_nodes == 16

    def test_wedge_node_count(self):
        sub = SubdomainSpec(
            Point2(0.0, 0.0),
            [BoundarySegment("constant", 0.0, 1.5 * PI, radius=1.0)],
            [MaterialSector(0.0, 1.5 * PI, 1.0, 1.0)],
            span=(0.0, 1.5 * PI))
        mesh = build_angular_mesh(sub, 0, 12, [], 1)
        assert not mesh.periodic
        assert mesh.n_nodes == mesh.n_elements + 1
        assert mesh.dof_angles[0] == pytest.approx(0.0)
        assert mesh.dof_angles[-1] == pytest.approx(1.5 * PI)

    def test_quadratic_elements_double_nodes(self):
        sub = make_disk()
        mesh = build_angular_mesh(sub, 0, 8, [], 2)
        assert mesh.n_nodes == 2 * mesh.n_elements

    def test_material_breakpoints_are_nodes(self):
        sub = SubdomainSpec(
            Point2(0.0, 0.0),
            [BoundarySegment("constant", 0.0, 2 * PI, radius=1.0)],
            [MaterialSector(0.0, 1.0, 0.4, 1.0),
             MaterialSector(1.0, 2 * PI, 0.6, 1.5)])
        mesh = build_angular_mesh(sub, 0, 16, [0.5], 1)
        for target in (0.0, 0.5, 1.0):
            assert np.min(np.abs(mesh.nodes - target)) < 1e-12


class TestInterfaces:
    def test_paired_nodes_coincide(self, case_notch):
        domain, _, _, _ = case_notch
        meshes = [build_angular_mesh(s, k, 16, self._endpoints(domain, k), 1)
                  for k, s in enumerate(domain.subdomains)]
        pairings = match_interfaces(domain, meshes)
        assert len(pairings) == len(domain.interfaces)
        for itf, (ia, ib) in zip(domain.interfaces, pairings):
            assert len(ia) == len(ib) > 0
            pa = to_cartesian(domain.subdomains[itf.sub_a],
                              np.zeros(len(ia)),
                              meshes[itf.sub_a].dof_angles[ia])
            pb = to_cartesian(domain.subdomains[itf.sub_b],
                              np.zeros(len(ib)),
                              meshes[itf.sub_b].dof_angles[ib])
            assert np.allclose(pa, pb, atol=1e-9)

    @staticmethod
    def _endpoints(domain, k):
        pts = []
        for itf in domain.interfaces:
            if itf.sub_a == k:
                pts.extend(itf.arc_a)
            if itf.sub_b == k:
                pts.extend(itf.arc_b)
        return pts


class TestJson:
    def test_fixture_roundtrip(self, any_case):
        domain, _, _, cfg = any_case
        rebuilt = domain_from_json(cfg)
        assert len(rebuilt.subdomains) == len(domain.subdomains)
        assert len(rebuilt.interfaces) == len(domain.interfaces)
        for a, b in zip(rebuilt.subdomains, domain.subdomains):
            phis = np.linspace(a.span[0] + 1e-9, a.span[1] - 1e-9, 50)
            ra, _ = a.radius(phis)
            rb, _ = b.radius(phis)
            assert np.allclose(ra, rb)

    def test_missing_sections_rejected(self):
        with pytest.raises((ValueError, KeyError)):
            domain_from_json({"subdomains": []})
