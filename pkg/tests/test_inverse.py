import math

import numpy as np
import pytest

from starelast.geometry import domain_from_json
from starelast.inverse import (AdamConfig, AdamState, InverseProblem,
                               Measurement, ParamField, adam_step,
                               eval_objective, grad_objective, l1_errors,
                               run_inversion, synthesize_measurement,
                               tv_smooth, tv_smooth_grad)

PI = math.pi


@pytest.fixture(scope="module")
def ctx(case_notch):
    domain, f, fs, _ = case_notch
    prob = InverseProblem(domain, f, fs, m_prime=8, M=8)
    return prob, domain


@pytest.fixture(scope="module")
def truth_field(ctx):
    prob, truth = ctx
    fld = prob.constant_field(1.0, 1.0)
    for k, sub in enumerate(truth.subdomains):
        mids = 0.5 * (fld.edges[k][:-1] + fld.edges[k][1:])
        vals = [sub.material(m) for m in mids]
        fld.mu[k] = np.array([v[0] for v in vals])
        fld.lam[k] = np.array([v[1] for v in vals])
    return fld


@pytest.fixture(scope="module")
def meas0(ctx):
    prob, truth = ctx
    return synthesize_measurement(prob, truth, 0.0, seed=3)


class TestParamField:
    def test_constant_shape(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.5, 1.5)
        assert fld.n_subs == 2
        for m, l, e in zip(fld.mu, fld.lam, fld.edges):
            assert len(m) == len(l) == 8
            assert len(e) == 9
            assert np.allclose(m, 0.5)
            assert np.allclose(l, 1.5)

    def test_vector_roundtrip(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.5, 1.5)
        rng = np.random.default_rng(0)
        vs = [rng.uniform(0.2, 2.0, len(v)) for v in fld.vectors()]
        fld2 = fld.with_vectors(vs)
        for v, w in zip(fld2.vectors(), vs):
            assert np.array_equal(v, w)

    def test_clamped_respects_bounds(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.5, 1.5, c1=0.6, c2=1.2)
        assert not fld.admissible()
        cl = fld.clamped()
        assert cl.admissible()
        assert np.allclose(cl.mu[0], 0.6)
        assert np.allclose(cl.lam[0], 1.2)

    def test_apply_to_preserves_geometry(self, ctx):
        prob, truth = ctx
        fld = prob.constant_field(0.5, 1.5)
        dom2 = fld.apply_to(truth)
        for a, b in zip(dom2.subdomains, truth.subdomains):
            phis = np.linspace(a.span[0] + 1e-9, a.span[1] - 1e-9, 20)
            assert np.allclose(a.radius(phis)[0], b.radius(phis)[0])
            assert a.material(phis[3]) == (0.5, 1.5)


class TestL1Errors:
    def test_exact_projection_is_zero(self, ctx, truth_field):
        _, truth = ctx
        em, el = l1_errors(truth_field, truth)
        assert em <= 1e-14
        assert el <= 1e-14

    def test_constant_field_error_value(self, ctx):
        prob, truth = ctx
        fld = prob.constant_field(1.0, 1.0)
        em, el = l1_errors(fld, truth)
        assert em > 0.1
        assert el > 0.1


class TestTvSmooth:
    def test_periodic_value(self):
        v = np.array([1.0, 3.0, 2.0])
        r = np.array([1.0, 2.0, 0.5, 1.0])
        nu = 0.0
        expect = 2.0 * 2.0 + 0.5 * 1.0 + 1.0 * 1.0
        assert tv_smooth(v, r, nu, True) == pytest.approx(expect)

    def test_wedge_value(self):
        v = np.array([1.0, 3.0, 2.0])
        r = np.array([1.0, 2.0, 0.5, 1.0])
        assert tv_smooth(v, r, 0.0, False) == pytest.approx(
            2.0 * 2.0 + 0.5 * 1.0)

    def test_nu_floor(self):
        v = np.array([1.0, 1.0])
        r = np.ones(3)
        assert tv_smooth(v, r, 0.1, False) == pytest.approx(0.1)

    @pytest.mark.parametrize("periodic", [True, False])
    def test_gradient_matches_fd(self, periodic):
        rng = np.random.default_rng(1)
        v = rng.uniform(0.5, 2.0, 6)
        r = rng.uniform(0.5, 2.0, 7)
        nu = 1e-3
        g = tv_smooth_grad(v, r, nu, periodic)
        h = 1e-7
        for i in range(6):
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            fd = (tv_smooth(vp, r, nu, periodic)
                  - tv_smooth(vm, r, nu, periodic)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestMeasurement:
    def test_deterministic(self, ctx):
        prob, truth = ctx
        a = synthesize_measurement(prob, truth, 0.01, seed=5)
        b = synthesize_measurement(prob, truth, 0.01, seed=5)
        for x, y in zip(a.traces, b.traces):
            assert np.array_equal(x, y)
        for x, y in zip(a.grid, b.grid):
            assert np.array_equal(x, y)

    def test_noise_bounded(self, ctx):
        prob, truth = ctx
        clean = synthesize_measurement(prob, truth, 0.0, seed=5)
        noisy = synthesize_measurement(prob, truth, 0.02, seed=5)
        bound = 0.02 * clean.u_inf * (1.0 + 1e-12)
        for x, y in zip(clean.grid, noisy.grid):
            assert np.max(np.abs(x - y)) <= bound

    def test_dirichlet_nodes_keep_exact_data(self, ctx):
        prob, truth = ctx
        from starelast.geometry import to_cartesian
        meas = synthesize_measurement(prob, truth, 0.05, seed=7)
        for k, mesh in enumerate(prob.meshes):
            free = prob.dirichlet_nodes[k]
            angles = mesh.dof_angles[free]
            fv = prob.f(to_cartesian(truth.subdomains[k],
                                     np.zeros_like(angles), angles))
            got = np.stack([meas.traces[k][2 * free],
                            meas.traces[k][2 * free + 1]], axis=1)
            assert np.allclose(got, fv, atol=1e-12)

    def test_interface_nodes_share_noise(self, ctx):
        prob, truth = ctx
        meas = synthesize_measurement(prob, truth, 0.05, seed=7)
        for itf, (ia, ib) in zip(prob.domain.interfaces, prob.pairings):
            a, b = itf.sub_a, itf.sub_b
            for ja, jb in zip(ia, ib):
                assert np.array_equal(meas.traces[a][2 * ja:2 * ja + 2],
                                      meas.traces[b][2 * jb:2 * jb + 2])

    def test_interpolant_prebuilt(self, meas0):
        assert meas0.z_solution is not None


class TestObjective:
    def test_j_decomposition(self, ctx, meas0):
        prob, _ = ctx
        fld = prob.constant_field(0.4, 1.1)
        eta, nu = 1e-5, 1e-6
        rep, _ = eval_objective(prob, fld, meas0, eta, nu)
        assert rep.J_nu == pytest.approx(
            rep.J0 + eta * (rep.tv_mu + rep.tv_lam), abs=1e-12)

    def test_zero_at_truth_noiseless(self, ctx, truth_field, meas0):
        prob, _ = ctx
        rep, _ = eval_objective(prob, truth_field, meas0, eta=0.0, nu=1e-7)
        ref, _ = eval_objective(prob, prob.constant_field(1.0, 1.0), meas0,
                                eta=0.0, nu=1e-7)
        assert rep.J0 <= 1e-8 * ref.J0

    def test_gradient_matches_fd(self, ctx, meas0):
        prob, _ = ctx
        fld = prob.constant_field(0.4, 1.1)
        eta, nu = 1e-7, 1e-7
        grads = grad_objective(prob, fld, meas0, eta, nu)
        scale = max(np.max(np.abs(g)) for g in grads)
        h = 1e-5
        rng = np.random.default_rng(2)
        for _ in range(4):
            k = int(rng.integers(fld.n_subs))
            i = int(rng.integers(2 * 8))
            vs = fld.vectors()
            vp = [v.copy() for v in vs]
            vm = [v.copy() for v in vs]
            vp[k][i] += h
            vm[k][i] -= h
            jp, _ = eval_objective(prob, fld.with_vectors(vp), meas0, eta, nu)
            jm, _ = eval_objective(prob, fld.with_vectors(vm), meas0, eta, nu)
            fd = (jp.J_nu - jm.J_nu) / (2 * h)
            assert abs(grads[k][i] - fd) <= 1e-3 * scale


class TestAdam:
    def test_zero_gradient_keeps_field(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.5, 1.5)
        state = AdamState.zeros(fld)
        zero = [np.zeros_like(v) for v in fld.vectors()]
        state2, fld2 = adam_step(state, zero, fld, AdamConfig())
        assert state2.t == 1
        for a, b in zip(fld2.vectors(), fld.vectors()):
            assert np.allclose(a, b)

    def test_step_moves_against_gradient(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.5, 1.5)
        state = AdamState.zeros(fld)
        g = [np.ones_like(v) for v in fld.vectors()]
        _, fld2 = adam_step(state, g, fld, AdamConfig(tau0=1e-3))
        for a, b in zip(fld2.vectors(), fld.vectors()):
            assert np.all(a < b)

    def test_step_respects_bounds(self, ctx):
        prob, _ = ctx
        fld = prob.constant_field(0.011, 1.5)
        state = AdamState.zeros(fld)
        g = [np.ones_like(v) for v in fld.vectors()]
        _, fld2 = adam_step(state, g, fld, AdamConfig(tau0=1.0))
        assert fld2.admissible()

    def test_schedule_decays(self):
        cfg = AdamConfig(tau0=1e-2, tau_decay=0.9)
        assert cfg.tau(0) == pytest.approx(1e-2)
        assert cfg.tau(2) == pytest.approx(1e-2 * 0.81)


class TestRunInversion:
    def test_short_run_decreases_objective(self, ctx, meas0):
        prob, truth = ctx
        init = prob.constant_field(0.35, 1.25)
        seen = []
        cfg = AdamConfig(max_iter=5, tol=0.0, tau0=5e-3)
        res = run_inversion(prob, meas0, init, cfg, truth=truth,
                            callback=lambda t, f, r: seen.append(t))
        assert res.n_iter == 5
        assert not res.converged
        assert seen == [1, 2, 3, 4, 5]
        assert res.J_history[-1] < res.J_history[0]
        assert res.err_mu is not None and res.err_mu > 0.0

    def test_converged_flag_on_tight_tol(self, ctx, meas0):
        prob, _ = ctx
        init = prob.constant_field(0.35, 1.25)
        cfg = AdamConfig(max_iter=50, tol=1e-1, tau0=1e-4)
        res = run_inversion(prob, meas0, init, cfg)
        assert res.converged
        assert res.n_iter < 50
