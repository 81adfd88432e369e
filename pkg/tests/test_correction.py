import numpy as np
import pytest

from trajcorr import correction as corr
from trajcorr.diff import concat, value
from trajcorr.odeint import TimeGrid, integrate_fixed
from trajcorr.plants import lti

GRID = TimeGrid(0.0, 1.0, 1e-3)


def _propagate(f, x0, grid=GRID):
    return integrate_fixed(f, np.asarray(x0, dtype=float), grid)


def _zero_traj(n, grid):
    return _propagate(lambda t, x: np.zeros(n), np.zeros(n), grid)


# --- sensitivity propagation ------------------------------------------------


def test_M_scalar_plant_closed_form():
    # x' = theta  =>  M(t) = t
    f = lambda t, x, th: concat((th[0],))
    base = _propagate(lambda t, x: np.zeros(1), [0.0])
    sens = corr.propagate_M(f, np.zeros(1), base, GRID)
    for t in (0.25, 0.5, 1.0):
        assert sens.M(t)[0, 0] == pytest.approx(t, abs=1e-12)
    assert np.all(sens.M(0.0) == 0.0)
    assert np.array_equal(sens.Phi(0.0), np.eye(1))


def test_M_double_integrator_closed_form():
    # x1' = x2, x2' = theta  =>  M(t) = [t^2/2, t]
    f = lambda t, x, th: concat((x[1], th[0]))
    base = _propagate(lambda t, x: np.array([x[1], 0.0]), [0.0, 0.0])
    sens = corr.propagate_M(f, np.zeros(1), base, GRID)
    for t in (0.3, 1.0):
        expected = lti.double_integrator_param_sensitivity(t)
        assert np.allclose(sens.M(t), expected, atol=1e-12)


def test_M_matches_fd_sensitivity_on_nonlinear_plant():
    # trajectory sensitivity oracle: central differences of the full solve
    def f(t, x, th):
        return concat((np.sin(x[1]) + th[0], -0.4 * x[0] + th[1] * np.cos(t)))

    theta = np.array([0.3, -0.2])
    grid = TimeGrid(0.0, 2.0, 1e-3)
    base = _propagate(lambda t, x: value(f(t, x, theta)), [0.5, 0.1], grid)
    sens = corr.propagate_M(f, theta, base, grid)
    eps = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        xp = _propagate(lambda t, x: value(f(t, x, theta + e)), [0.5, 0.1], grid)
        xm = _propagate(lambda t, x: value(f(t, x, theta - e)), [0.5, 0.1], grid)
        fd = (xp.xs[-1] - xm.xs[-1]) / (2.0 * eps)
        col = sens.M(2.0)[:, j]
        assert np.linalg.norm(col - fd) / np.linalg.norm(fd) < 1e-6


# --- parameter correction ---------------------------------------------------


def test_zero_gap_gives_zero_increment():
    f = lambda t, x, th: concat((th[0],))
    base = _propagate(lambda t, x: np.zeros(1), [0.0])
    sens = corr.propagate_M(f, np.zeros(1), base, GRID)
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[1.0],
                                     targets=[[base.eval(1.0)[0]]])
    res = corr.correct_parameters(sens, cons, base)
    assert np.all(res.theta_tilde == 0.0)
    assert np.all(res.predicted_residuals == 0.0)


def test_scalar_unit_sensitivity():
    # baseline theta* = 0 gives x*(1) = 0; constraint x(1) = 1 => theta~ = 1
    f = lambda t, x, th: concat((th[0],))
    base = _propagate(lambda t, x: np.zeros(1), [0.0])
    sens = corr.propagate_M(f, np.zeros(1), base, GRID)
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[1.0], targets=[[1.0]])
    res = corr.correct_parameters(sens, cons, base)
    assert res.theta_tilde[0] == pytest.approx(1.0, rel=1e-10)
    assert res.diagnostics.rank == 1


def test_min_norm_solution_structure():
    x, diag = corr._min_norm_pinv(np.array([[1.0, 1.0]]), np.array([2.0]), 1e-12)
    assert np.allclose(x, [1.0, 1.0], atol=1e-12)
    assert diag.rank == 1


def test_min_norm_against_sampled_alternatives():
    rng = np.random.default_rng(42)
    for _ in range(200):
        p = int(rng.integers(1, 4))
        l = int(rng.integers(p + 1, p + 9))
        L = rng.standard_normal((p, l))
        b = rng.standard_normal(p)
        x, _ = corr._min_norm_pinv(L, b, 1e-12)
        _, _, Vt = np.linalg.svd(L)
        null = Vt[p:]
        coeffs = rng.standard_normal((30, null.shape[0]))
        alts = x[None, :] + coeffs @ null
        assert np.all(np.linalg.norm(alts, axis=1) >= np.linalg.norm(x) - 1e-9)


def test_rank_zero_raises():
    f = lambda t, x, th: np.zeros(1)  # theta never enters
    base = _propagate(lambda t, x: np.zeros(1), [0.0])
    sens = corr.propagate_M(f, np.zeros(2), base, GRID)
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[1.0], targets=[[1.0]])
    with pytest.raises(corr.RankZero):
        corr.correct_parameters(sens, cons, base)


def test_pinv_rel_tol_truncates():
    L = np.array([[1.0, 0.0], [0.0, 1e-5]])
    x, diag = corr._min_norm_pinv(L, np.array([1.0, 1.0]), 1e-3)
    assert diag.rank == 1
    assert x[1] == 0.0


def test_parameter_exactness_scalar_two_constraints():
    # linear-in-(x, theta) plant: one shot must satisfy both interim points
    a = -0.8
    f = lambda t, x, th: concat((a * x[0] + th[0] + th[1] * t,))
    theta_star = np.array([0.2, -0.1])
    base = _propagate(lambda t, x: value(f(t, x, theta_star)), [0.4])
    sens = corr.propagate_M(f, theta_star, base, GRID)
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[0.5, 1.0],
                                     targets=[[0.3], [1.0]])
    res = corr.correct_parameters(sens, cons, base, rel_tol=1e-10)
    traj = corr.apply_correction(res, np.array([0.4]), GRID, f_theta=f,
                                 theta_star=theta_star)
    assert abs(traj.eval(0.5)[0] - 0.3) <= 1e-6
    assert abs(traj.eval(1.0)[0] - 1.0) <= 1e-6


def test_parameter_exactness_with_initial_offset():
    # x~0 enters through the homogeneous term
    f = lambda t, x, th: concat((x[1], th[0] + th[1] * t))
    theta_star = np.zeros(2)
    x0_star = np.array([0.0, 0.0])
    base = _propagate(lambda t, x: value(f(t, x, theta_star)), x0_star)
    sens = corr.propagate_M(f, theta_star, base, GRID)
    H = np.array([[1.0, 0.0]])
    cons = corr.InterimConstraintSet(H=H, times=[1.0], targets=[[0.7]])
    x0_actual = np.array([0.05, -0.02])
    res = corr.correct_parameters(sens, cons, base,
                                  x_tilde0=x0_actual - x0_star, rel_tol=1e-10)
    traj = corr.apply_correction(res, x0_actual, GRID, f_theta=f,
                                 theta_star=theta_star)
    assert abs(traj.eval(1.0)[0] - 0.7) <= 1e-6


def test_apply_zero_increment_reproduces_baseline():
    f = lambda t, x, th: concat((np.sin(x[0]) * th[0] + th[1],))
    theta_star = np.array([0.4, 0.2])
    base = _propagate(lambda t, x: value(f(t, x, theta_star)), [0.1])
    res = corr.CorrectionResult(
        kind="parameter", theta_tilde=np.zeros(2), u_tilde=None,
        predicted_residuals=np.zeros((1, 1)),
        diagnostics=corr.SolveDiagnostics(1, np.ones(1), 1.0))
    traj = corr.apply_correction(res, np.array([0.1]), GRID, f_theta=f,
                                 theta_star=theta_star)
    assert np.array_equal(traj.xs, base.xs)


# --- Gramian propagation ----------------------------------------------------


def test_UN_trivial_system():
    # A = 0, B = I, R = I: U = I, N = t I
    n = 3
    f = lambda t, x, u: u
    base = _zero_traj(n, GRID)
    bundle = corr.propagate_UN(f, base.eval, lambda t: np.zeros(n), np.eye(n),
                               GRID)
    assert np.allclose(bundle.U(0.7), np.eye(n), atol=1e-12)
    assert np.allclose(bundle.N(0.7), 0.7 * np.eye(n), atol=1e-12)


@pytest.fixture(scope="module")
def di_bundle():
    plant = lti.double_integrator()
    grid = TimeGrid(0.0, 2.0, 1e-3)
    base = _zero_traj(2, grid)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.eye(1), grid)
    return plant, base, bundle


def test_UN_double_integrator_closed_forms(di_bundle):
    plant, _, bundle = di_bundle
    # Phi(tf, tau) recovered from U products
    assert np.allclose(bundle.phi(2.0, 0.5), plant.phi(2.0, 0.5), atol=1e-9)
    # single final-constraint Gramian matches [[T^3/3, T^2/2], [T^2/2, T]]
    psi = bundle.U(1.0) @ bundle.N(1.0) @ bundle.U(1.0).T
    assert np.allclose(psi, lti.double_integrator_gramian(1.0), atol=1e-9)


def test_N_monotone_psd(di_bundle):
    _, _, bundle = di_bundle
    for t1, t2 in ((0.2, 0.9), (0.9, 1.7), (0.1, 2.0)):
        diff_N = bundle.N(t2) - bundle.N(t1)
        eigs = np.linalg.eigvalsh(diff_N)
        assert np.all(eigs >= -1e-12)


def test_semigroup_property():
    rng = np.random.default_rng(17)
    A0 = rng.standard_normal((3, 3)) * 0.5
    A1 = rng.standard_normal((3, 3)) * 0.3
    f = lambda t, x, u: (A0 + np.sin(2.0 * t) * A1) @ x + u
    grid = TimeGrid(0.0, 1.0, 1e-3)
    base = _zero_traj(3, grid)
    bundle = corr.propagate_UN(f, base.eval, lambda t: np.zeros(3), np.eye(3),
                               grid)
    t1, t2, t3 = 0.2, 0.55, 0.95
    lhs = bundle.phi(t3, t1)
    rhs = bundle.phi(t3, t2) @ bundle.phi(t2, t1)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)) < 1e-9


def test_singular_U_detected():
    A = np.diag([15.0, -15.0])
    f = lambda t, x, u: A @ x + u
    grid = TimeGrid(0.0, 1.1, 1e-3)
    base = _zero_traj(2, grid)
    with pytest.raises(corr.SingularU):
        corr.propagate_UN(f, base.eval, lambda t: np.zeros(2), np.eye(2), grid)


# --- Gramian assembly -------------------------------------------------------


def test_psi_single_block_reduces_to_gramian(di_bundle):
    _, _, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=np.zeros((1, 2)))
    psi = corr.assemble_psi(bundle, cons)
    assert np.allclose(psi, lti.double_integrator_gramian(1.0), atol=1e-9)


def test_psi_block_symmetry_and_pd(di_bundle):
    _, _, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0, 2.0],
                                     targets=np.zeros((2, 2)))
    psi = corr.assemble_psi(bundle, cons)
    assert np.max(np.abs(psi - psi.T)) <= 1e-10 * np.max(np.abs(psi))
    assert np.all(np.linalg.eigvalsh(psi) > 0.0)


def _simpson(vals, h):
    # composite Simpson; exact for the polynomial integrands used here
    w = np.ones(len(vals))
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / 3.0) * np.tensordot(w, vals, axes=1)


def test_psi_vs_quadrature_oracle(di_bundle):
    plant, _, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0, 2.0],
                                     targets=np.zeros((2, 2)))
    psi = corr.assemble_psi(bundle, cons)
    quad = np.zeros((4, 4))
    ts_pair = (1.0, 2.0)
    for i, ti in enumerate(ts_pair):
        for j, tj in enumerate(ts_pair):
            tmin = min(ti, tj)
            taus = np.linspace(0.0, tmin, 201)
            vals = np.array([plant.phi(ti, u) @ plant.B @ plant.B.T
                             @ plant.phi(tj, u).T for u in taus])
            quad[2 * i:2 * i + 2, 2 * j:2 * j + 2] = _simpson(
                vals, taus[1] - taus[0])
    assert np.max(np.abs(psi - quad)) <= 1e-8


# --- control correction -----------------------------------------------------


def test_zero_gap_gives_zero_schedule(di_bundle):
    _, base, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[base.eval(1.0)])
    res = corr.correct_control(bundle, cons, base)
    assert np.all(res.mu_bar == 0.0)
    for t in np.linspace(0.0, 2.0, 17):
        assert np.all(res.u_tilde(t) == 0.0)


def test_minimum_energy_rest_to_rest():
    # classic double-integrator transfer to [1, 0]: u(t) = 6 - 12 t
    plant = lti.double_integrator()
    base = _zero_traj(2, GRID)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.eye(1), GRID)
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[[1.0, 0.0]])
    res = corr.correct_control(bundle, cons, base)
    assert np.allclose(res.mu_bar, [12.0, -6.0], rtol=1e-9)
    for t in np.linspace(0.0, 1.0, 101):
        assert abs(res.u_tilde(t)[0] - (6.0 - 12.0 * t)) <= 1e-8
    traj = corr.apply_correction(res, np.zeros(2), GRID, f_u=plant.f_u,
                                 policy_fn=lambda x: np.zeros(1))
    assert np.max(np.abs(traj.eval(1.0) - [1.0, 0.0])) <= 1e-6


def test_schedule_zero_after_last_constraint(di_bundle):
    plant, base, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[[0.5, 0.2]])
    res = corr.correct_control(bundle, cons, base)
    assert np.any(res.u_tilde(1.0) != 0.0)  # boundary included
    assert np.all(res.u_tilde(1.0 + 1e-12) == 0.0)
    assert np.all(res.u_tilde(1.7) == 0.0)


def test_control_exactness_interim_points():
    plant = lti.double_integrator()
    grid = TimeGrid(0.0, 2.0, 1e-3)
    theta_star = None
    base = _zero_traj(2, grid)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.eye(1), grid)
    H = np.array([[1.0, 0.0]])
    cons = corr.InterimConstraintSet(H=H, times=[1.0, 2.0],
                                     targets=[[1.0], [0.0]])
    res = corr.correct_control(bundle, cons, base)
    assert np.max(np.abs(res.predicted_residuals)) <= 1e-8
    traj = corr.apply_correction(res, np.zeros(2), grid, f_u=plant.f_u,
                                 policy_fn=lambda x: np.zeros(1))
    assert abs(traj.eval(1.0)[0] - 1.0) <= 1e-6
    assert abs(traj.eval(2.0)[0] - 0.0) <= 1e-6


def test_control_exactness_with_initial_offset_and_weight():
    a, b = -0.5, 1.3
    plant = lti.scalar_plant(a, b)
    base = _propagate(lambda t, x: plant.f_u(t, x, np.zeros(1)), [0.8])
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.array([[2.5]]), GRID)
    cons = corr.InterimConstraintSet(H=[[1.0]], times=[1.0], targets=[[2.0]])
    x0 = np.array([0.95])
    res = corr.correct_control(bundle, cons, base, x_tilde0=x0 - [0.8])
    traj = corr.apply_correction(res, x0, GRID, f_u=plant.f_u,
                                 policy_fn=lambda x: np.zeros(1))
    assert abs(traj.eval(1.0)[0] - 2.0) <= 1e-6
    # scalar Gramian closed form with weight r
    assert res.psi[0, 0] == pytest.approx(lti.scalar_gramian(a, b, 2.5, 1.0),
                                          rel=1e-9)


def test_final_time_reduction_identity_random_ltv():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(300 + trial)
        A0, A1 = rng.standard_normal((2, 3, 3)) * 0.4
        B0, B1 = rng.standard_normal((2, 3, 2)) * 0.8
        H = rng.standard_normal((2, 3))
        f = lambda t, x, u: (A0 + np.sin(t) * A1) @ x + (B0 + t * B1) @ u
        grid = TimeGrid(0.0, 1.0, 2e-3)
        base = _propagate(lambda t, x: f(t, x, np.zeros(2)),
                          rng.standard_normal(3), grid)
        r_diag = 1.0 + rng.random(2)
        bundle = corr.propagate_UN(f, base.eval, lambda t: np.zeros(2),
                                   np.diag(r_diag), grid)
        cons = corr.InterimConstraintSet(H=H, times=[1.0],
                                         targets=[rng.standard_normal(2)])
        xt0 = 0.1 * rng.standard_normal(3)
        res = corr.correct_control(bundle, cons, base, x_tilde0=xt0)
        ref = corr.final_time_lqr_schedule(bundle, cons, base, x_tilde0=xt0)
        for t in np.linspace(0.0, 1.0, 37):
            worst = max(worst, np.max(np.abs(res.u_tilde(t) - ref(t))))
    assert worst <= 1e-10


def test_control_minimality_null_space_perturbations():
    # energy does not decrease under constraint-preserving variations
    plant = lti.double_integrator()
    base = _zero_traj(2, GRID)
    R = np.eye(1)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               R, GRID)
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[[1.0, 0.0]])
    res = corr.correct_control(bundle, cons, base)
    # 50-point grid drawn from the propagation knots so schedule values are
    # exact formula evaluations
    idx = np.arange(0, 1001, 1000 // 49)[:50]
    taus = GRID.knots()[idx]
    w = np.gradient(taus)  # trapezoid-style weights
    u_vals = np.array([res.u_tilde(float(t)) for t in taus])  # (50, 1)
    C = np.zeros((2, 50))
    for k, t in enumerate(taus):
        C[:, k] = (w[k] * plant.phi(1.0, float(t)) @ plant.B)[:, 0]
    _, _, Vt = np.linalg.svd(C)
    null = Vt[2:]
    energy = lambda u: float(np.sum(w * (u[:, 0] ** 2)))
    e0 = energy(u_vals)
    rng = np.random.default_rng(77)
    for _ in range(50):
        delta = (null.T @ rng.standard_normal(null.shape[0]))[:, None]
        assert energy(u_vals + delta) >= e0 - 1e-9 * max(1.0, e0)


def test_ill_conditioned_psi_raises(di_bundle):
    _, base, bundle = di_bundle
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0, 1.0 + 1e-10],
                                     targets=np.zeros((2, 2)))
    with pytest.raises(corr.IllConditionedPsi):
        corr.correct_control(bundle, cons, base)


# --- feedback mode ----------------------------------------------------------


def test_feedback_parameter_rejects_unmodeled_offset():
    f = lambda t, x, th: concat((x[1], th[0] + th[1] * t))
    theta_star = np.zeros(2)
    base = _propagate(lambda t, x: value(f(t, x, theta_star)), [0.0, 0.0])
    sens = corr.propagate_M(f, theta_star, base, GRID)
    H = np.array([[1.0, 0.0]])
    cons = corr.InterimConstraintSet(H=H, times=[1.0], targets=[[0.5]])
    res = corr.correct_parameters(sens, cons, base, rel_tol=1e-10)
    x0_off = np.array([0.08, -0.05])  # disturbance unknown to the solve
    single = corr.apply_correction(res, x0_off, GRID, f_theta=f,
                                   theta_star=theta_star)
    fb = corr.apply_correction(res, x0_off, GRID, f_theta=f,
                               theta_star=theta_star, mode="feedback",
                               sens=sens, constraints=cons, baseline=base,
                               rel_tol=1e-10)
    err_single = abs(single.eval(1.0)[0] - 0.5)
    err_fb = abs(fb.eval(1.0)[0] - 0.5)
    assert err_fb < 1e-5
    assert err_fb < 0.1 * err_single


def test_feedback_control_rejects_unmodeled_offset():
    plant = lti.double_integrator()
    base = _zero_traj(2, GRID)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.eye(1), GRID)
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[[1.0, 0.0]])
    res = corr.correct_control(bundle, cons, base)
    x0_off = np.array([0.06, -0.04])
    single = corr.apply_correction(res, x0_off, GRID, f_u=plant.f_u,
                                   policy_fn=lambda x: np.zeros(1))
    fb = corr.apply_correction(res, x0_off, GRID, f_u=plant.f_u,
                               policy_fn=lambda x: np.zeros(1),
                               mode="feedback", bundle=bundle,
                               constraints=cons, baseline=base)
    err_single = np.max(np.abs(single.eval(1.0) - [1.0, 0.0]))
    err_fb = np.max(np.abs(fb.eval(1.0) - [1.0, 0.0]))
    assert err_fb < 0.2 * err_single


# --- plumbing ---------------------------------------------------------------


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        corr.InterimConstraintSet(H=[[1.0]], times=[1.0, 0.5],
                                  targets=[[1.0], [2.0]])
    with pytest.raises(ValueError):
        corr.InterimConstraintSet(H=[[1.0]], times=[], targets=[])


def test_result_serialization_roundtrip():
    plant = lti.double_integrator()
    base = _zero_traj(2, GRID)
    bundle = corr.propagate_UN(plant.f_u, base.eval, lambda t: np.zeros(1),
                               np.eye(1), GRID)
    cons = corr.InterimConstraintSet(H=np.eye(2), times=[1.0],
                                     targets=[[1.0, 0.0]])
    res = corr.correct_control(bundle, cons, base)
    d = corr.result_to_dict(res)
    assert d["kind"] == "control"
    assert len(d["mu_bar"]) == 2
    assert d["u_tilde"]["t_cut"] == 1.0
    import json
    json.dumps(d)  # must be JSON-serializable

    f = lambda t, x, th: concat((th[0],))
    base1 = _propagate(lambda t, x: np.zeros(1), [0.0])
    sens = corr.propagate_M(f, np.zeros(1), base1, GRID)
    cons1 = corr.InterimConstraintSet(H=[[1.0]], times=[1.0], targets=[[1.0]])
    res1 = corr.correct_parameters(sens, cons1, base1)
    d1 = corr.result_to_dict(res1)
    assert d1["kind"] == "parameter"
    assert d1["diagnostics"]["rel_tol"] == 0.005
    json.dumps(d1)
