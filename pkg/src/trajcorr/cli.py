"""Command-line front end: train, correct, ensemble, and verify subcommands.

Emits plot-ready CSV time series and JSON summaries.  Every output file
is byte-reproducible for a fixed (scenario, seed, command) triple, and
ensemble members are data-parallel with results merged in member order so
the thread count never changes the bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import correction as corr
from . import diff, policy
from .odeint import NonFiniteState, OdeError, TimeGrid, integrate_adaptive, integrate_fixed
from .plants import lti
from .plants.mars import MarsGuidance, mars_policy_network
from .scenario import ScenarioConfig, ScenarioError, default_scenario, load_scenario
from .train import TrainConfig, train

__all__ = ["main", "RunManifest", "EnsembleStats", "dispersion_ring", "run_verify_checks"]

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

TIMESERIES_SCHEMA = "run-timeseries-v1"
MEMBERS_SCHEMA = "ensemble-members-v1"

_CSV_COLUMNS = ("t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "m",
                "delta_T", "sigma_T", "eta_T", "e_r", "e_v")


@dataclass(frozen=True)
class RunManifest:
    """One CLI invocation worth of work."""

    command: str
    scenario_path: Optional[str]
    seeds: tuple
    method: str
    mode: str
    out_dir: Path

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


@dataclass
class EnsembleStats:
    """Per-seed, per-method moments of the terminal errors over the ring."""

    seed: int
    method: str
    n_members: int
    n_failed: int
    mean_e_rf: float
    std_e_rf: float
    mean_e_vf: float
    std_e_vf: float
    mean_m_f: float
    std_m_f: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v)
                for k, v in self.__dict__.items()}


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _load_cfg(args) -> ScenarioConfig:
    if getattr(args, "scenario", None):
        if not os.path.exists(args.scenario):
            raise ScenarioError(f"scenario file not found: {args.scenario}")
        cfg = load_scenario(args.scenario)
    else:
        cfg = default_scenario()
    overrides = {}
    if getattr(args, "tf", None) is not None:
        overrides["t_f"] = args.tf
    if getattr(args, "pinv_rtol", None) is not None:
        overrides["pinv_rel_tol"] = args.pinv_rtol
    if overrides:
        import dataclasses
        if "t_f" in overrides:
            cfg = dataclasses.replace(
                cfg, mission=dataclasses.replace(cfg.mission, t_f=overrides["t_f"]))
        if "pinv_rel_tol" in overrides:
            cfg = dataclasses.replace(cfg, pinv_rel_tol=overrides["pinv_rel_tol"])
    return cfg


def _guidance(cfg: ScenarioConfig) -> MarsGuidance:
    net = mars_policy_network(cfg.params, hidden=cfg.hidden_dims)
    return MarsGuidance(cfg.params, cfg.mission, net)


def _checkpoint_path(out_dir: Path, seed: int) -> Path:
    return out_dir / f"policy_seed{seed}.json"


def _final_constraints(guidance: MarsGuidance) -> corr.InterimConstraintSet:
    return corr.InterimConstraintSet(H=guidance.H,
                                     times=[guidance.mission.t_f],
                                     targets=[guidance.z_target])


def _write_run_csv(path: Path, guidance: MarsGuidance, traj, theta) -> None:
    us = guidance.control_history(traj, theta)
    lines = [f"# schema={TIMESERIES_SCHEMA}", ",".join(_CSV_COLUMNS)]
    for t, x, u in zip(traj.ts, traj.xs, us):
        e_r, e_v = guidance.errors(x)
        row = [t, *x, *u, e_r, e_v]
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _run_record(guidance: MarsGuidance, traj, csv_name: str) -> dict:
    e_rf, e_vf = guidance.errors(traj.xs[-1])
    return {"ok": True, "e_rf": e_rf, "e_vf": e_vf,
            "m_f": float(traj.xs[-1][6]), "csv": csv_name}


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    import dataclasses
    for seed in args.seeds:
        tc = dataclasses.replace(cfg.train, seed=seed)
        if args.iterations is not None:
            tc = dataclasses.replace(tc, iterations=args.iterations)
        guidance = _guidance(cfg)
        theta_star, report = train(tc, guidance)
        net = policy.unflatten(guidance.net, theta_star)
        policy.save_checkpoint(net, _checkpoint_path(out_dir, seed))
        _write_json(out_dir / f"train_report_seed{seed}.json",
                    {"schema": "train-report-v1", "seed": seed,
                     **report.to_dict()})
        print(f"seed {seed}: trained {report.iterations_run} iterations, "
              f"best cost {min(report.cost_history):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# correct


def _corrected_runs(cfg: ScenarioConfig, guidance: MarsGuidance, theta_star,
                    methods, x0=None, x_tilde0=None, mode="single",
                    shared=None):
    """Baseline plus requested corrected runs from one initial state.

    Returns dict method -> (traj or exception, result or None).  `shared`
    caches the sensitivity/Gramian propagation so ensemble members reuse
    the baseline linearization.
    """
    grid = guidance.eval_grid(cfg.dt)
    x0 = guidance.x0 if x0 is None else x0
    constraints = _final_constraints(guidance)
    out = {}
    baseline_n = (shared["baseline"] if shared
                  else guidance.propagate(theta_star, grid=grid))
    out["baseline"] = (guidance.propagate(theta_star, x0=x0, grid=grid)
                       if x_tilde0 is not None else baseline_n, None)
    if "theta" in methods:
        try:
            sens = shared["sens"] if shared else corr.propagate_M(
                guidance.bound_f_theta(), theta_star, baseline_n, grid)
            result = corr.correct_parameters(sens, constraints, baseline_n,
                                             x_tilde0=x_tilde0,
                                             rel_tol=cfg.pinv_rel_tol)
            traj = corr.apply_correction(
                result, x0, grid, f_theta=guidance.bound_f_theta(),
                theta_star=theta_star, mode=mode, sens=sens,
                constraints=constraints, baseline=baseline_n,
                rel_tol=cfg.pinv_rel_tol)
            out["theta"] = (traj, result)
        except (corr.CorrectionError, OdeError, diff.NonFiniteDerivative) as exc:
            out["theta"] = (exc, None)
    if "u" in methods:
        try:
            bundle = shared["bundle"] if shared else corr.propagate_UN(
                guidance.bound_f_u(), baseline_n.eval,
                lambda t: guidance.policy_u(baseline_n.eval(t), theta_star),
                cfg.R(), grid)
            result = corr.correct_control(bundle, constraints, baseline_n,
                                          x_tilde0=x_tilde0)
            traj = corr.apply_correction(
                result, x0, grid, f_u=guidance.bound_f_u(),
                policy_fn=lambda x: guidance.policy_u(x, theta_star),
                mode=mode, bundle=bundle, constraints=constraints,
                baseline=baseline_n)
            out["u"] = (traj, result)
        except (corr.CorrectionError, OdeError, diff.NonFiniteDerivative) as exc:
            out["u"] = (exc, None)
    return out


def _methods_from_flag(method: str):
    if method == "none":
        return ()
    if method == "all":
        return ("theta", "u")
    return (method,)


def cmd_correct(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    exit_code = EXIT_OK
    for seed in args.seeds:
        ckpt = _checkpoint_path(out_dir, seed)
        if not ckpt.exists():
            print(f"error: missing checkpoint {ckpt}", file=sys.stderr)
            return EXIT_USAGE
        net = policy.load_checkpoint(ckpt)
        guidance = MarsGuidance(cfg.params, cfg.mission, net)
        theta_star = net.theta
        runs = _corrected_runs(cfg, guidance, theta_star,
                               _methods_from_flag(args.method), mode=args.mode)
        summary = {"schema": "run-summary-v1", "seed": seed,
                   "t_f": cfg.mission.t_f, "pinv_rel_tol": cfg.pinv_rel_tol,
                   "runs": {}}
        for name, (traj, result) in runs.items():
            if isinstance(traj, Exception):
                summary["runs"][name] = {"ok": False, "error": str(traj)}
                exit_code = EXIT_NUMERICAL
                continue
            csv_name = f"run_seed{seed}_{name}.csv"
            _theta = theta_star
            if name == "theta" and result is not None:
                _theta = theta_star + result.theta_tilde
            _write_run_csv(out_dir / csv_name, guidance, traj, _theta)
            rec = _run_record(guidance, traj, csv_name)
            if result is not None:
                rec["diagnostics"] = {
                    "rank": int(result.diagnostics.rank),
                    "condition": float(result.diagnostics.condition),
                    "predicted_residual_max": float(
                        np.max(np.abs(result.predicted_residuals))),
                }
                if result.diagnostics.rel_tol is not None:
                    rec["diagnostics"]["rel_tol"] = float(result.diagnostics.rel_tol)
            summary["runs"][name] = rec
            print(f"seed {seed} {name}: e_rf={rec['e_rf']:.3f} m, "
                  f"e_vf={rec['e_vf']:.3f} m/s, m_f={rec['m_f']:.1f} kg")
        _write_json(out_dir / f"summary_seed{seed}.json", summary)
    return exit_code


# ---------------------------------------------------------------------------
# ensemble


def dispersion_ring(r0, v0, radius: float = 100.0, count: int = 16):
    """Deterministic initial-position offsets on the circle normal to v0.

    Points sit at angles k * 2*pi/count starting from alpha = 0, in the
    plane perpendicular to the initial velocity, centred on r0.
    """
    w = np.cross(v0, r0)
    w_hat = w / np.linalg.norm(w)
    v_hat = v0 / np.linalg.norm(v0)
    b1 = np.cross(w_hat, v_hat)
    alphas = np.arange(count) * (2.0 * np.pi / count)
    offsets = radius * (np.outer(np.cos(alphas), b1)
                        + np.outer(np.sin(alphas), w_hat))
    return alphas, offsets


def _landing_frame(guidance: MarsGuidance):
    """Right-handed (downrange, crosstrack, up) triad at the target point."""
    up = guidance.r_fd / np.linalg.norm(guidance.r_fd)
    w = np.cross(guidance.v0, guidance.r0)
    e2 = w / np.linalg.norm(w)
    e1 = np.cross(e2, up)
    return e1, e2, up


def _ensemble_member(cfg, guidance, theta_star, methods, alpha, offset,
                     shared, mode):
    x0 = guidance.x0.copy()
    x0[0:3] += offset
    x_tilde0 = np.zeros(7)
    x_tilde0[0:3] = offset
    runs = _corrected_runs(cfg, guidance, theta_star, methods, x0=x0,
                           x_tilde0=x_tilde0, mode=mode, shared=shared)
    e1, e2, up = _landing_frame(guidance)
    records = {}
    for name, (traj, _result) in runs.items():
        if isinstance(traj, Exception):
            records[name] = {"ok": False, "error": str(traj)}
            continue
        xf = traj.xs[-1]
        dr = xf[0:3] - guidance.r_fd
        dv = xf[3:6] - guidance.v_fd
        e_rf, e_vf = guidance.errors(xf)
        records[name] = {
            "ok": True, "e_rf": e_rf, "e_vf": e_vf, "m_f": float(xf[6]),
            "pos_e1": float(dr @ e1), "pos_e2": float(dr @ e2),
            "verr_e1": float(dv @ e1), "verr_e2": float(dv @ e2),
            "verr_up": float(dv @ up),
        }
    return records


def cmd_ensemble(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = _methods_from_flag(args.method)
    all_stats = {}
    exit_code = EXIT_OK
    for seed in args.seeds:
        ckpt = _checkpoint_path(out_dir, seed)
        if not ckpt.exists():
            print(f"error: missing checkpoint {ckpt}", file=sys.stderr)
            return EXIT_USAGE
        net = policy.load_checkpoint(ckpt)
        guidance = MarsGuidance(cfg.params, cfg.mission, net)
        theta_star = net.theta
        grid = guidance.eval_grid(cfg.dt)
        constraints = _final_constraints(guidance)
        baseline_n = guidance.propagate(theta_star, grid=grid)
        shared = {"baseline": baseline_n}
        if "theta" in methods:
            shared["sens"] = corr.propagate_M(guidance.bound_f_theta(),
                                              theta_star, baseline_n, grid)
        if "u" in methods:
            shared["bundle"] = corr.propagate_UN(
                guidance.bound_f_u(), baseline_n.eval,
                lambda t: guidance.policy_u(baseline_n.eval(t), theta_star),
                cfg.R(), grid)
        alphas, offsets = dispersion_ring(guidance.r0, guidance.v0,
                                          radius=args.radius,
                                          count=args.members)
        jobs = [(alpha, off) for alpha, off in zip(alphas, offsets)]
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                member_records = list(pool.map(
                    lambda j: _ensemble_member(cfg, guidance, theta_star,
                                               methods, j[0], j[1], shared,
                                               args.mode), jobs))
        else:
            member_records = [_ensemble_member(cfg, guidance, theta_star,
                                               methods, a, o, shared, args.mode)
                              for a, o in jobs]
        # members CSV, ordered by member index then method
        lines = [f"# schema={MEMBERS_SCHEMA}",
                 "member,alpha,method,ok,e_rf,e_vf,m_f,pos_e1,pos_e2,"
                 "verr_e1,verr_e2,verr_up"]
        run_names = ["baseline", *methods]
        for idx, (alpha, rec) in enumerate(zip(alphas, member_records)):
            for name in run_names:
                r = rec[name]
                if r["ok"]:
                    vals = [r[k] for k in ("e_rf", "e_vf", "m_f", "pos_e1",
                                           "pos_e2", "verr_e1", "verr_e2",
                                           "verr_up")]
                    lines.append(",".join([str(idx), _fmt(alpha), name, "1",
                                           *(_fmt(v) for v in vals)]))
                else:
                    lines.append(",".join([str(idx), _fmt(alpha), name, "0",
                                           *([""] * 8)]))
        (out_dir / f"ensemble_seed{seed}_members.csv").write_text(
            "\n".join(lines) + "\n")
        seed_stats = {}
        for name in run_names:
            good = [rec[name] for rec in member_records if rec[name]["ok"]]
            n_failed = len(member_records) - len(good)
            if n_failed:
                exit_code = EXIT_NUMERICAL
            if good:
                e_rf = np.array([g["e_rf"] for g in good])
                e_vf = np.array([g["e_vf"] for g in good])
                m_f = np.array([g["m_f"] for g in good])
                st = EnsembleStats(
                    seed=seed, method=name, n_members=len(member_records),
                    n_failed=n_failed,
                    mean_e_rf=float(np.mean(e_rf)), std_e_rf=float(np.std(e_rf)),
                    mean_e_vf=float(np.mean(e_vf)), std_e_vf=float(np.std(e_vf)),
                    mean_m_f=float(np.mean(m_f)), std_m_f=float(np.std(m_f)))
            else:
                st = EnsembleStats(seed=seed, method=name,
                                   n_members=len(member_records),
                                   n_failed=n_failed, mean_e_rf=np.nan,
                                   std_e_rf=np.nan, mean_e_vf=np.nan,
                                   std_e_vf=np.nan, mean_m_f=np.nan,
                                   std_m_f=np.nan)
            seed_stats[name] = st.to_dict()
            print(f"seed {seed} {name}: mean e_rf={st.mean_e_rf:.3f} m "
                  f"(std {st.std_e_rf:.3f}), mean e_vf={st.mean_e_vf:.3f} m/s")
        all_stats[str(seed)] = seed_stats
    _write_json(out_dir / "ensemble_stats.json",
                {"schema": "ensemble-stats-v1", "stats": all_stats})
    return exit_code


# ---------------------------------------------------------------------------
# verify


def _check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return bool(ok)


def run_verify_checks(fault_inject: Optional[str] = None) -> bool:
    """Fast oracle suite: closed forms, finite differences, exactness."""
    ok = True

    # fixed-step convergence order on a rotation system
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    x0 = np.array([1.0, 0.0])
    exact = np.array([np.cos(1.0), -np.sin(1.0)])
    errs = []
    for dt in (0.01, 0.005):
        traj = integrate_fixed(lambda t, x: A @ x, x0, TimeGrid(0.0, 1.0, dt))
        errs.append(np.linalg.norm(traj.xs[-1] - exact))
    ok &= _check("rk4-4th-order", errs[0] / errs[1] >= 14.0,
                 f"ratio {errs[0] / errs[1]:.1f}")

    # adaptive endpoint accuracy and event localization
    traj = integrate_adaptive(lambda t, x: -x, np.array([1.0]),
                              TimeGrid(0.0, 5.0, rtol=1e-9, atol=1e-12))
    ok &= _check("dp54-endpoint", abs(traj.xs[-1][0] - np.exp(-5.0)) < 1e-8)
    from .odeint import StopCondition
    stop = StopCondition(event=lambda t, x: 0.5 - x[0], direction=+1)
    traj = integrate_adaptive(lambda t, x: -x, np.array([1.0]),
                              TimeGrid(0.0, 5.0, rtol=1e-9, atol=1e-12), stop)
    ok &= _check("event-time", abs(traj.t_end - np.log(2.0)) < 1e-6 * 5.0,
                 f"err {abs(traj.t_end - np.log(2.0)):.2e}")

    # dual Jacobians vs central differences on the closed-loop Mars RHS
    cfg = default_scenario()
    guidance = _guidance(cfg)
    theta = policy.init_parameters(guidance.net.layer_dims, 0)
    x0m = guidance.x0
    f = guidance.bound_f_theta()
    _, Ax, Bt = diff.linearize(f, 0.0, x0m, theta)
    scale = np.maximum(np.abs(x0m), 1.0)
    fd_A = diff.central_difference_jacobian(
        lambda xx: diff.value(f(0.0, xx, theta)), x0m, 1e-4 * scale)
    rel_A = np.max(np.abs(Ax - fd_A)) / max(np.max(np.abs(fd_A)), 1e-12)
    ok &= _check("mars-jacobian-x", rel_A < 1e-6, f"rel {rel_A:.2e}")
    idx = np.arange(0, theta.size, 23)
    fd_cols = []
    for j in idx:
        e = np.zeros(theta.size)
        e[j] = 1e-4
        fd_cols.append((diff.value(f(0.0, x0m, theta + e))
                        - diff.value(f(0.0, x0m, theta - e))) / 2e-4)
    rel_B = (np.max(np.abs(Bt[:, idx] - np.array(fd_cols).T))
             / max(np.max(np.abs(fd_cols)), 1e-12))
    ok &= _check("mars-jacobian-theta", rel_B < 1e-6, f"rel {rel_B:.2e}")

    # sensitivity closed forms and parameter-correction exactness
    grid = TimeGrid(0.0, 1.0, 1e-3)
    f_sc = lambda t, x, th: diff.concat((th[0] + th[1] * t,))
    base = integrate_fixed(lambda t, x: diff.value(f_sc(t, x, np.zeros(2))),
                           np.array([0.0]), grid)
    sens = corr.propagate_M(f_sc, np.zeros(2), base, grid)
    ok &= _check("sensitivity-closed-form",
                 np.allclose(sens.M(1.0), [[1.0, 0.5]], atol=1e-10))
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[0.5, 1.0],
                                     targets=[[0.3], [1.0]])
    res = corr.correct_parameters(sens, cons, base, rel_tol=1e-10)
    traj = corr.apply_correction(res, np.array([0.0]), grid, f_theta=f_sc,
                                 theta_star=np.zeros(2))
    resid = max(abs(traj.eval(0.5)[0] - 0.3), abs(traj.eval(1.0)[0] - 1.0))
    ok &= _check("param-exactness", resid < 1e-6, f"resid {resid:.2e}")

    # minimum-norm property of the pseudoinverse path
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(50):
        p, l = rng.integers(1, 4), rng.integers(5, 12)
        L = rng.standard_normal((p, l))
        b = rng.standard_normal(p)
        x, _ = corr._min_norm_pinv(L, b, 1e-12)
        _, _, Vt = np.linalg.svd(L)
        null = Vt[np.linalg.matrix_rank(L):]
        for _k in range(20):
            alt = x + null.T @ rng.standard_normal(null.shape[0])
            worst = max(worst, np.linalg.norm(x) - np.linalg.norm(alt))
    ok &= _check("pinv-min-norm", worst <= 1e-9, f"max excess {worst:.2e}")

    # Gramian propagation vs closed form, symmetry, quadrature oracle
    plant = lti.double_integrator()
    grid2 = TimeGrid(0.0, 2.0, 1e-3)
    zero_base = integrate_fixed(lambda t, x: np.zeros(2), np.zeros(2), grid2)
    bundle = corr.propagate_UN(plant.f_u, zero_base.eval,
                               lambda t: np.zeros(1), np.eye(1), grid2)
    psi_exact = lti.double_integrator_gramian(1.0)
    err = np.max(np.abs(bundle.U(1.0) @ bundle.N(1.0) @ bundle.U(1.0).T
                        - psi_exact))
    ok &= _check("gramian-closed-form", err < 1e-9, f"err {err:.2e}")
    cons2 = corr.InterimConstraintSet(H=np.eye(2), times=[1.0, 2.0],
                                      targets=np.zeros((2, 2)))
    psi_bar = corr.assemble_psi(bundle, cons2)
    if fault_inject == "psi-symmetry":
        psi_bar = psi_bar.copy()
        psi_bar[0, 2] += 1e-3
    asym = np.max(np.abs(psi_bar - psi_bar.T)) / np.max(np.abs(psi_bar))
    ok &= _check("psi-symmetry", asym < 1e-10, f"rel asym {asym:.2e}")
    quad = np.zeros((4, 4))
    simpson_w = np.ones(201)
    simpson_w[1:-1:2] = 4.0
    simpson_w[2:-1:2] = 2.0
    for i, ti in enumerate((1.0, 2.0)):
        for j, tj in enumerate((1.0, 2.0)):
            tmin = min(ti, tj)
            taus = np.linspace(0.0, tmin, 201)
            vals = np.array([plant.phi(ti, u) @ plant.B @ plant.B.T
                             @ plant.phi(tj, u).T for u in taus])
            quad[2 * i:2 * i + 2, 2 * j:2 * j + 2] = (
                (taus[1] - taus[0]) / 3.0) * np.tensordot(simpson_w, vals, axes=1)
    qerr = np.max(np.abs(corr.assemble_psi(bundle, cons2) - quad))
    ok &= _check("psi-quadrature-oracle", qerr < 1e-8, f"err {qerr:.2e}")

    # control-correction exactness and the minimum-energy closed form
    grid1 = TimeGrid(0.0, 1.0, 1e-3)
    zero1 = integrate_fixed(lambda t, x: np.zeros(2), np.zeros(2), grid1)
    bundle1 = corr.propagate_UN(plant.f_u, zero1.eval, lambda t: np.zeros(1),
                                np.eye(1), grid1)
    cons1 = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                      targets=[[1.0, 0.0]])
    res1 = corr.correct_control(bundle1, cons1, zero1)
    uerr = max(abs(res1.u_tilde(t)[0] - (6.0 - 12.0 * t))
               for t in np.linspace(0.0, 1.0, 101))
    ok &= _check("min-energy-closed-form", uerr < 1e-6, f"err {uerr:.2e}")
    traj1 = corr.apply_correction(res1, np.zeros(2), grid1, f_u=plant.f_u,
                                  policy_fn=lambda x: np.zeros(1))
    cerr = np.max(np.abs(traj1.xs[-1] - [1.0, 0.0]))
    ok &= _check("control-exactness", cerr < 1e-6, f"resid {cerr:.2e}")

    # single-final-constraint reduction identity on random LTV systems
    worst_id = 0.0
    for trial in range(5):
        rngt = np.random.default_rng(100 + trial)
        A0, A1 = rngt.standard_normal((2, 3, 3)) * 0.4
        B0, B1 = rngt.standard_normal((2, 3, 2)) * 0.8
        H = rngt.standard_normal((2, 3))
        f_ltv = lambda t, x, u: (A0 + np.sin(t) * A1) @ x + (B0 + t * B1) @ u
        gridv = TimeGrid(0.0, 1.0, 2e-3)
        basev = integrate_fixed(lambda t, x: f_ltv(t, x, np.zeros(2)),
                                rngt.standard_normal(3), gridv)
        bundlev = corr.propagate_UN(f_ltv, basev.eval, lambda t: np.zeros(2),
                                    np.diag([1.0, 2.0]), gridv)
        consv = corr.InterimConstraintSet(H=H, times=[1.0],
                                          targets=[rngt.standard_normal(2)])
        xt0 = 0.1 * rngt.standard_normal(3)
        resv = corr.correct_control(bundlev, consv, basev, x_tilde0=xt0)
        ref = corr.final_time_lqr_schedule(bundlev, consv, basev, x_tilde0=xt0)
        for t in np.linspace(0.0, 1.0, 41):
            worst_id = max(worst_id,
                           np.max(np.abs(resv.u_tilde(t) - ref(t))))
    ok &= _check("final-time-reduction-identity", worst_id < 1e-10,
                 f"max gap {worst_id:.2e}")
    return bool(ok)


def cmd_verify(args) -> int:
    ok = run_verify_checks(fault_inject=args.fault_inject)
    print("verify:", "all checks passed" if ok else "FAILURES detected")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, out_default):
    p.add_argument("--scenario", help="scenario file (defaults built in)")
    p.add_argument("--seed", default="0",
                   help="comma-separated seed list, e.g. 0,1,2")
    p.add_argument("--tf", type=float, default=None,
                   help="override the final time [s]")
    p.add_argument("--pinv-rtol", type=float, default=None,
                   help="override the pseudoinverse relative tolerance")
    p.add_argument("--out", default=out_default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    out_default = os.environ.get("TRAJCORR_OUT", "runs")
    ap = argparse.ArgumentParser(
        prog="trajcorr",
        description="Train a descent policy and apply interim-point corrections.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="stage-1 baseline policy optimization")
    _add_common(p, out_default)
    p.add_argument("--iterations", type=int, default=None,
                   help="override training iterations")

    p = sub.add_parser("correct", help="single-shot or feedback corrections")
    _add_common(p, out_default)
    p.add_argument("--method", choices=("none", "theta", "u", "all"),
                   default="all")
    p.add_argument("--mode", choices=("single", "feedback"), default="single")

    p = sub.add_parser("ensemble", help="initial-dispersion ring experiment")
    _add_common(p, out_default)
    p.add_argument("--method", choices=("none", "theta", "u", "all"),
                   default="all")
    p.add_argument("--mode", choices=("single", "feedback"), default="single")
    p.add_argument("--members", type=int, default=16)
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("verify", help="run the oracle check suite")
    p.add_argument("--fault-inject", choices=("psi-symmetry",), default=None)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if hasattr(args, "seed"):
        try:
            args.seeds = tuple(int(s) for s in str(args.seed).split(","))
        except ValueError:
            print(f"error: bad seed list {args.seed!r}", file=sys.stderr)
            return EXIT_USAGE
        if len(set(args.seeds)) != len(args.seeds):
            print("error: seeds must be distinct", file=sys.stderr)
            return EXIT_USAGE
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "correct":
            return cmd_correct(args)
        if args.command == "ensemble":
            return cmd_ensemble(args)
        if args.command == "verify":
            return cmd_verify(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OdeError, corr.CorrectionError, diff.NonFiniteDerivative,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
