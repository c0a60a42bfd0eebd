"""Batch command-line driver: eigenvalue tables, forward runs, convergence
sweeps, measurement synthesis and inversions, with CSV outputs.

Exit codes: 0 success, 1 input error, 2 non-convergence, 3 numerical failure.
Log verbosity is controlled by the SE_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geometry import (ConfigurationError, DecomposedDomain, GeometryError,
                       domain_from_json)
from .assembly import AssemblyError
from .modal import SpectralError
from .forward import (BoundaryData, SolverError, convergence_study,
                      solve_forward)
from .inverse import (AdamConfig, InverseProblem, run_inversion,
                      synthesize_measurement)

log = logging.getLogger("starelast")

DEFAULT_SWEEP = [16, 32, 64, 128, 256]


def _fmt_err(x: float) -> str:
    return "" if not math.isfinite(x) else f"{x:.3e}"


def _fmt_full(x: float) -> str:
    return f"{x:.16g}"


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _problem_of(cfg: dict):
    """(domain, boundary data, body-force spec) from a fixture dictionary."""
    domain = domain_from_json(cfg)
    prob = cfg.get("problem", {})
    f = BoundaryData.from_json(prob.get("dirichlet", {"kind": "constant",
                                                      "value": [0.0, 0.0]}))
    bf = prob.get("body_force")
    force_spec = None
    if bf is not None:
        force_spec = (bf["kind"], tuple(bf["value"])) \
            if bf["kind"] == "constant" else (bf["kind"],)
    return domain, f, force_spec


def _write_csv(path: Path, header: List[str], rows: List[List[str]]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    log.info("wrote %s", path)


def cmd_eigen(args) -> int:
    cfg = _load_config(args.config)
    domain, f, force_spec = _problem_of(cfg)
    Ms = [args.M] if args.M else list(DEFAULT_SWEEP)
    M_ref = args.M_ref or 2 * max(Ms)
    ref = solve_forward(domain, M_ref, f, force_spec, p=2)
    g_ref = ref.gamma3(args.track_sub)
    rows, prev = [], None
    for M in sorted(Ms):
        sol = solve_forward(domain, M, f, force_spec, p=1)
        g = sol.gamma3(args.track_sub)
        err = abs(g - g_ref)
        order = (math.log2(prev / err) if prev and err > 0 else float("nan"))
        rows.append([str(M), _fmt_full(g), _fmt_err(err),
                     "" if not math.isfinite(order) else f"{order:.3f}"])
        prev = err
    _write_csv(Path(args.out) / "gamma_table.csv",
               ["M", "gamma3", "err", "order"], rows)
    return 0


def cmd_forward(args) -> int:
    cfg = _load_config(args.config)
    domain, f, force_spec = _problem_of(cfg)
    M = args.M or 64
    sol = solve_forward(domain, M, f, force_spec, p=1)
    out = Path(args.out)
    k = cfg.get("profile", {}).get("subdomain", 0)
    phi0 = float(cfg.get("profile", {}).get("phi0", 3 * math.pi / 4))
    rhos = np.linspace(args.rho_min, 0.0, 400)
    r, du1, du2 = sol.radial_profile(k, phi0, rhos)
    _write_csv(out / "radial_profile.csv", ["r", "du1_dr", "du2_dr"],
               [[_fmt_full(a), _fmt_full(b), _fmt_full(c)]
                for a, b, c in zip(r, du1, du2)])
    rows = []
    for kk, bun in enumerate(sol.bundles):
        tr = sol.nodal_traces(kk)
        for j, phi in enumerate(bun.mesh.dof_angles):
            rows.append([str(kk), _fmt_full(phi),
                         _fmt_full(tr[2 * j]), _fmt_full(tr[2 * j + 1])])
    _write_csv(out / "boundary_traces.csv",
               ["subdomain", "phi", "u1", "u2"], rows)
    _write_csv(out / "gamma3.csv", ["subdomain", "gamma3"],
               [[str(kk), _fmt_full(sol.gamma3(kk))]
                for kk in range(len(sol.bundles))])
    return 0


def cmd_convergence(args) -> int:
    cfg = _load_config(args.config)
    domain, f, force_spec = _problem_of(cfg)
    Ms = [args.M] if args.M else list(DEFAULT_SWEEP)
    rows = convergence_study(domain, Ms, f, force_spec,
                             M_ref=args.M_ref, track_sub=args.track_sub)
    table = [[str(r.M), _fmt_err(r.eig_err),
              "" if not math.isfinite(r.eig_order) else f"{r.eig_order:.3f}",
              _fmt_err(r.l2_err),
              "" if not math.isfinite(r.l2_order) else f"{r.l2_order:.3f}",
              _fmt_err(r.en_err),
              "" if not math.isfinite(r.en_order) else f"{r.en_order:.3f}"]
             for r in rows]
    _write_csv(Path(args.out) / "convergence.csv",
               ["M", "eig_err", "eig_order", "l2_err", "l2_order",
                "energy_err", "energy_order"], table)
    return 0


def _inverse_context(args):
    cfg = _load_config(args.config)
    if "domain" in cfg:
        dom_path = Path(args.config).parent / cfg["domain"]
        dom_cfg = _load_config(str(dom_path))
    else:
        dom_cfg = cfg
    domain, f, force_spec = _problem_of(dom_cfg)
    inv = cfg.get("inversion", {})
    m_prime = args.m_prime or int(inv.get("m_prime", 128))
    M = args.M or int(inv.get("M", m_prime))
    delta = args.delta if args.delta is not None \
        else float(inv.get("delta", 1e-4))
    seed = args.seed if args.seed is not None else int(inv.get("seed", 0))
    prob = InverseProblem(domain, f, force_spec, m_prime=m_prime, M=M,
                          rho_min=args.rho_min)
    return cfg, domain, prob, delta, seed


def cmd_synth(args) -> int:
    _, domain, prob, delta, seed = _inverse_context(args)
    meas = synthesize_measurement(prob, domain, delta, seed)
    rows = []
    for k, tr in enumerate(meas.traces):
        for i, v in enumerate(tr):
            rows.append([str(k), "trace", str(i // 2), str(i % 2),
                         _fmt_full(v)])
    for k, g in enumerate(meas.grid):
        np_, _, nr = g.shape
        for i in range(np_):
            for c in range(2):
                for r in range(nr):
                    rows.append([str(k), f"grid_{r}", str(i), str(c),
                                 _fmt_full(g[i, c, r])])
    _write_csv(Path(args.out) / "measurement.csv",
               ["subdomain", "kind", "point", "component", "value"], rows)
    return 0


def cmd_invert(args) -> int:
    cfg, domain, prob, delta, seed = _inverse_context(args)
    inv = cfg.get("inversion", {})
    hyper = inv.get("hyper", {})
    acfg = AdamConfig(
        tol=float(hyper.get("tol", 5e-6)),
        max_iter=args.max_iter or int(hyper.get("max_iter", 1000)),
        tau0=float(hyper.get("tau0", 5e-3)),
        tau_decay=float(hyper.get("tau_decay", 0.995)),
        eta=float(hyper.get("eta", 1e-7)),
        nu=float(hyper.get("nu", 1e-7)))
    init = inv.get("init", {"mu": 0.35, "lambda": 1.5})
    fld0 = prob.constant_field(float(init["mu"]), float(init["lambda"]))
    meas = synthesize_measurement(prob, domain, delta, seed)
    iter_rows = []

    def cb(t, fld, rep):
        gmax = max(float(np.max(np.abs(g))) for g in rep.grads)
        iter_rows.append([str(t), _fmt_full(rep.J_nu), _fmt_full(rep.J0),
                          _fmt_err(acfg.tau(t - 1)), _fmt_err(gmax)])
        log.info("iter %d J=%.6e", t, rep.J_nu)

    use_truth = bool(inv.get("truth", True))
    res = run_inversion(prob, meas, fld0, acfg,
                        truth=domain if use_truth else None, callback=cb)
    out = Path(args.out)
    _write_csv(out / "iterations.csv",
               ["t", "J_nu", "J0", "lr", "max_grad"], iter_rows)
    rows = []
    for k in range(res.field.n_subs):
        e = res.field.edges[k]
        for j in range(len(e) - 1):
            rows.append([str(k), str(j + 1), _fmt_full(e[j]),
                         _fmt_full(e[j + 1]),
                         _fmt_full(res.field.mu[k][j]),
                         _fmt_full(res.field.lam[k][j])])
    _write_csv(out / "reconstruction.csv",
               ["subdomain", "j", "phi_lo", "phi_hi", "mu", "lambda"], rows)
    plot_rows = []
    for k in range(res.field.n_subs):
        e = res.field.edges[k]
        sub = domain.subdomains[k]
        for j in range(len(e) - 1):
            mid = 0.5 * (e[j] + e[j + 1])
            mu_t, lam_t = sub.material(mid) if use_truth else ("", "")
            plot_rows.append(
                [str(k), _fmt_full(mid),
                 _fmt_full(res.field.mu[k][j]), _fmt_full(res.field.lam[k][j]),
                 _fmt_full(mu_t) if use_truth else "",
                 _fmt_full(lam_t) if use_truth else ""])
    _write_csv(out / "profiles.csv",
               ["subdomain", "phi", "mu", "lambda", "mu_true", "lambda_true"],
               plot_rows)
    summary = [["iterations", str(res.n_iter)],
               ["converged", str(int(res.converged))],
               ["J_final", _fmt_full(res.J_history[-1])]]
    if res.err_mu is not None:
        summary += [["err_mu_l1", _fmt_err(res.err_mu)],
                    ["err_lambda_l1", _fmt_err(res.err_lam)]]
    _write_csv(out / "summary.csv", ["key", "value"], summary)
    return 0 if res.converged else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="starelast",
        description="Semi-analytic elasticity solver for composite domains "
                    "with singularities, and Lame-coefficient inversion.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("eigen", cmd_eigen), ("forward", cmd_forward),
                     ("convergence", cmd_convergence), ("synth", cmd_synth),
                     ("invert", cmd_invert)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--M", type=int, default=None)
        p.add_argument("--M-ref", dest="M_ref", type=int, default=None)
        p.add_argument("--m-prime", dest="m_prime", type=int, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--rho-min", dest="rho_min", type=float, default=-18.0)
        p.add_argument("--track-sub", dest="track_sub", type=int, default=0)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
        p.set_defaults(func=fn)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("SE_LOG", "WARNING").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError,
            KeyError) as exc:
        log.error("input error: %s", exc)
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (GeometryError, AssemblyError, SpectralError, SolverError,
            np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
