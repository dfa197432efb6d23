import numpy as np
import pytest
from scipy.optimize import fsolve

from core.config import LoadingConfig, expand_loading
from core.constitutive import (
    ElasticParams,
    HyperElasticModel,
    ParameterFields,
    PlasticParams,
    SimoModel,
    hyperelastic_evaluate,
)
from core.errors import CgStalled, NewtonDiverged
from core.microstructure import (
    PhaseGrid,
    bind_parameters,
    make_cubic_inclusion,
    make_laminate,
    phase_contrast,
)
from core.projection import (
    NyquistMode,
    apply_projected_tangent,
    apply_projection,
    build_projection,
    curl_residual,
    projected_tangent_operator,
)
from core.solver import (
    CellState,
    Increment,
    MemorySink,
    SolveReport,
    SolverParams,
    cg_solve,
    commit_state,
    equilibrium_residual,
    run_program,
    solve_increment,
)
from core.tensor_field import constant2, field_inner, field_mean, field_norm, make_shape

SOFT = ElasticParams(1.0, 0.3)
TIGHT = SolverParams(eta_newton=1e-9, eta_cg=1e-10, max_newton=50)
SMALL_INCLUSION = 0.036  # side 4 on 11 to 13 points


def simple_shear(gamma, d=3):
    fbar = np.eye(d)
    fbar[0, 1] = gamma
    return fbar


def cube_problem(points, contrast=10.0, fraction=SMALL_INCLUSION, mode=NyquistMode.ZERO_COMPATIBLE):
    shape = make_shape(points)
    pg = make_cubic_inclusion(shape, fraction)
    model = HyperElasticModel(bind_parameters(pg, phase_contrast(SOFT, contrast)))
    return shape, model, build_projection(shape, mode)


def solve(shape, model, G, fbar, params=SolverParams()):
    state = CellState.initial(shape, model)
    return solve_increment(state, Increment(fbar), model, G, params)


# --- Parameters and increments ------------------------------------------------

def test_solver_params_defaults_and_cap():
    params = SolverParams()
    assert params.eta_newton == 1e-5
    assert params.eta_cg == 1e-8
    assert params.max_newton == 30
    assert params.cg_cap(make_shape((3, 4))) == 12 * 4
    assert SolverParams(max_cg=7).cg_cap(make_shape((3, 4))) == 7


@pytest.mark.parametrize(
    "kwargs", [{"eta_newton": 0.0}, {"eta_cg": 1.0}, {"max_newton": 0}, {"max_cg": 0}]
)
def test_solver_params_validation(kwargs):
    with pytest.raises(ValueError):
        SolverParams(**kwargs)


def test_increment_rejects_inverted_fbar():
    with pytest.raises(ValueError):
        Increment(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        Increment(np.eye(4))


def test_increment_fbar_is_read_only():
    inc = Increment([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValueError):
        inc.fbar[0, 0] = 2.0


def test_fbar_dimension_must_match_grid():
    shape = make_shape((5, 5))
    model = HyperElasticModel(ParameterFields.uniform(SOFT))
    with pytest.raises(ValueError):
        solve(shape, model, build_projection(shape), np.eye(3))


# --- Linear solve -------------------------------------------------------------

def elastic_system(rng, points=(5, 5, 5)):
    shape = make_shape(points)
    G = build_projection(shape)
    model = HyperElasticModel(ParameterFields.uniform(SOFT))
    _, K, _ = model.evaluate(np.broadcast_to(np.eye(3)[:, :, None, None, None], (3, 3) + points).copy())
    rhs = apply_projection(G, rng.standard_normal((3, 3) + points))
    return shape, G, K, rhs


def test_cg_zero_rhs_returns_zero_without_iterations(rng):
    shape, G, K, rhs = elastic_system(rng)
    dF, iterations = cg_solve(projected_tangent_operator(G, K), np.zeros_like(rhs), SolverParams())
    assert iterations == 0
    assert np.all(dF == 0.0)


def test_projected_tangent_is_symmetric_positive_on_compatible_fields(rng):
    shape, G, K, x = elastic_system(rng)
    y = apply_projection(G, rng.standard_normal(x.shape))
    Ax = apply_projected_tangent(G, K, x)
    Ay = apply_projected_tangent(G, K, y)
    assert field_inner(x, Ay) == pytest.approx(field_inner(Ax, y), rel=1e-10)
    assert field_inner(x, Ax) > 0.0


def test_cg_solves_projected_system(rng):
    shape, G, K, rhs = elastic_system(rng)
    dF, iterations = cg_solve(projected_tangent_operator(G, K), rhs, SolverParams(eta_cg=1e-10))
    assert 0 < iterations < 100
    residual = apply_projected_tangent(G, K, dF) - rhs
    assert field_norm(residual) / field_norm(rhs) < 1e-9
    # the solution stays compatible
    assert curl_residual(G, dF) < 1e-10


def test_cg_accepts_plain_callable(rng):
    shape, G, K, rhs = elastic_system(rng)
    a, _ = cg_solve(projected_tangent_operator(G, K), rhs, SolverParams())
    b, _ = cg_solve(lambda x: apply_projected_tangent(G, K, x), rhs, SolverParams())
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_cg_stalls_when_capped(rng):
    shape, G, K, rhs = elastic_system(rng)
    with pytest.raises(CgStalled):
        cg_solve(projected_tangent_operator(G, K), rhs, SolverParams(max_cg=1), max_cg=1)


# --- Homogeneous cells --------------------------------------------------------

@pytest.mark.parametrize(
    "fbar",
    [
        [[1.2, 0.3, 0.0], [-0.1, 0.9, 0.2], [0.05, 0.0, 1.1]],
        [[0.8, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.4, 1.0]],
    ],
)
def test_homogeneous_cell_is_exact(fbar):
    shape = make_shape((5, 5, 5))
    model = HyperElasticModel(ParameterFields.uniform(SOFT))
    state, report = solve(shape, model, build_projection(shape), fbar)
    np.testing.assert_allclose(state.F, constant2(shape, fbar), atol=1e-12)
    assert report.newton_iterations == 1
    assert report.converged
    assert report.status == "converged"


def test_homogeneous_simo_cell_stays_uniform():
    shape = make_shape((4, 5))
    soft = PlasticParams(SOFT, tau_y0=0.003, hardening=0.01)
    model = SimoModel(ParameterFields.uniform(soft))
    program = expand_loading(LoadingConfig(mode="pure_shear", value=1.05, increments=5), 2)
    sink = MemorySink()
    state = run_program(CellState.initial(shape, model), program, model, build_projection(shape), SolverParams(), sink)

    assert [r.newton_iterations for r in sink.reports] == [1] * 5
    np.testing.assert_allclose(state.F, constant2(shape, program[-1].fbar), atol=1e-12)
    assert np.all(state.history.eps_p > 0.0)
    np.testing.assert_allclose(state.history.eps_p, state.history.eps_p.ravel()[0], rtol=1e-10)


# --- Reference solutions ------------------------------------------------------

def dft_matrix(N):
    k = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(k, k) / N)


def dense_projection(points):
    """Row-wise compatibility projector as a dense real matrix (2-D, unit cell)."""
    n0, n1 = points
    n = n0 * n1
    W = np.kron(dft_matrix(n0), dft_matrix(n1))
    q = np.meshgrid(np.fft.fftfreq(n0) * n0, np.fft.fftfreq(n1) * n1, indexing="ij")
    q = np.array([c.ravel() for c in q])
    q2 = (q**2).sum(axis=0)
    q2[0] = 1.0
    blocks = [[None, None], [None, None]]
    for j in range(2):
        for l in range(2):
            g = q[j] * q[l] / q2
            g[0] = 0.0
            blocks[j][l] = W.conj().T @ (g[:, None] * W) / n
    Gblock = np.block(blocks)
    assert np.abs(Gblock.imag).max() < 1e-12
    return np.kron(np.eye(2), Gblock.real)


def dense_tangent(K):
    """dvec(P) = Kmat dvec(F) with K_ijkl = dP_ji / dF_kl, node-diagonal."""
    n = int(np.prod(K.shape[4:]))
    Kn = K.reshape((2, 2, 2, 2, n))
    T = np.einsum("baklm,mM->abmklM", Kn, np.eye(n))
    return T.reshape((4 * n, 4 * n))


def dense_reference(fbar, fields, points):
    G_big = dense_projection(points)
    w, V = np.linalg.eigh(G_big)
    Q = V[:, w > 0.5]
    assert Q.shape[1] == 2 * (np.prod(points) - 1)

    F0 = constant2(points, fbar).ravel()
    y = np.zeros(Q.shape[1])
    for _ in range(50):
        F = (F0 + Q @ y).reshape((2, 2) + points)
        P, K = hyperelastic_evaluate(F, fields)
        r = Q.T @ P.ravel()
        if np.linalg.norm(r) < 1e-14:
            return F
        y -= np.linalg.solve(Q.T @ dense_tangent(K) @ Q, r)
    raise AssertionError("dense reference did not converge")


def test_matches_dense_reference():
    points = (5, 5)
    shape = make_shape(points)
    labels = np.zeros(points, dtype=np.int64)
    labels[1:3, 2:5] = 1
    labels[4, 0] = 1
    fields = bind_parameters(PhaseGrid(shape, labels, 2), [SOFT, ElasticParams(4.0, 0.25)])
    fbar = np.array([[1.05, 0.15], [-0.05, 0.97]])

    model = HyperElasticModel(fields)
    state, report = solve(shape, model, build_projection(shape), fbar, TIGHT)
    assert report.converged

    np.testing.assert_allclose(state.F, dense_reference(fbar, fields, points), atol=1e-8)


def laminate_reference(phases, fractions, fbar):
    """Uniform F per layer: jumps a_p (x) e_x, zero mean jump, continuous traction P . e_x."""
    f0, f1 = fractions
    d = fbar.shape[0]
    e_x = np.eye(d)[0]

    def layer_F(a):
        return fbar + np.outer(a, e_x)

    def traction(F, params):
        P, _ = hyperelastic_evaluate(F[:, :, None], params)
        return P[:, 0, 0]

    def mismatch(a0):
        a1 = -f0 * a0 / f1
        return traction(layer_F(a0), phases[0]) - traction(layer_F(a1), phases[1])

    a0 = fsolve(mismatch, np.zeros(d), xtol=1e-12)
    assert np.abs(mismatch(a0)).max() < 1e-10
    return layer_F(a0), layer_F(-f0 * a0 / f1)


def test_laminate_matches_layerwise_reference():
    shape = make_shape((15, 5))
    fractions = (1.0 / 3.0, 2.0 / 3.0)
    pg = make_laminate(shape, fractions)
    phases = [SOFT, ElasticParams(5.0, 0.3)]
    model = HyperElasticModel(bind_parameters(pg, phases))
    fbar = np.array([[1.1, 0.1], [0.05, 0.95]])

    state, report = solve(shape, model, build_projection(shape), fbar, TIGHT)
    assert report.converged

    expected = laminate_reference(phases, fractions, fbar)
    for label, F_layer in enumerate(expected):
        nodes = state.F[:, :, pg.labels == label]
        np.testing.assert_allclose(nodes, np.broadcast_to(F_layer[:, :, None], nodes.shape), atol=1e-6)


# --- Load programs ------------------------------------------------------------

def test_mean_deformation_follows_program():
    shape, model, G = cube_problem((9, 9), contrast=5.0)
    program = expand_loading(LoadingConfig(mode="simple_shear", value=0.3, increments=3), 2)
    sink = MemorySink()
    run_program(CellState.initial(shape, model), program, model, G, SolverParams(), sink)

    assert [r.label for r in sink.reports] == [inc.label for inc in program]
    assert all(r.converged and r.wall_ms > 0.0 for r in sink.reports)
    for F, inc in zip(sink.fields, program):
        np.testing.assert_allclose(field_mean(F), inc.fbar, atol=1e-12)
        assert curl_residual(G, F) < 1e-10


def test_hyperelastic_loading_is_reversible():
    shape, model, G = cube_problem((7, 7), contrast=5.0)
    out = expand_loading(LoadingConfig(mode="simple_shear", value=0.2, increments=2), 2)
    back = [Increment(np.eye(2), label="unload")]
    state = run_program(CellState.initial(shape, model), out + back, model, G, SolverParams())
    np.testing.assert_allclose(state.F, constant2(shape, np.eye(2)), atol=1e-8)


def test_empty_program_leaves_state_untouched():
    shape, model, G = cube_problem((5, 5))
    start = CellState.initial(shape, model)
    sink = MemorySink()
    assert run_program(start, [], model, G, SolverParams(), sink) is start
    assert sink.reports == []


@pytest.mark.parametrize("mode", list(NyquistMode))
def test_even_grid_converges_in_both_nyquist_modes(mode):
    shape, model, G = cube_problem((8, 8), contrast=5.0, mode=mode)
    state, report = solve(shape, model, G, simple_shear(0.2, 2))
    assert report.converged
    np.testing.assert_allclose(field_mean(state.F), simple_shear(0.2, 2), atol=1e-12)


# --- Failures -----------------------------------------------------------------

def test_newton_divergence_carries_report():
    shape, model, G = cube_problem((9, 9, 9))
    program = [Increment(simple_shear(0.5), label=0.5)]
    sink = MemorySink()
    with pytest.raises(NewtonDiverged) as err:
        run_program(CellState.initial(shape, model), program, model, G, SolverParams(max_newton=1), sink)

    report = err.value.report
    assert isinstance(report, SolveReport)
    assert not report.converged
    assert report.status == "failed"
    assert len(report.residuals) == 2
    assert report.wall_ms > 0.0
    assert sink.failure is err.value
    assert sink.reports == [report]


class CountingModel:
    """Records every F the solver evaluates."""

    def __init__(self, inner):
        self.inner = inner
        self.evaluated = []

    def initial_history(self, shape):
        return self.inner.initial_history(shape)

    def evaluate(self, F, committed=None):
        self.evaluated.append(np.array(F, copy=True))
        return self.inner.evaluate(F, committed)

    def commit(self, trial):
        return self.inner.commit(trial)


def test_converged_tangent_spreads_the_next_increment():
    shape, inner, G = cube_problem((9, 9), contrast=5.0)
    model = CountingModel(inner)
    state = CellState.initial(shape, model)
    assert state.tangent is None

    state, first = solve_increment(state, Increment(simple_shear(0.1, 2)), model, G, SolverParams())
    # one extra evaluation at the start state, none at the end
    assert len(model.evaluated) == len(first.residuals) + 1
    state = commit_state(state, model)
    _, K, _ = inner.evaluate(state.F)
    np.testing.assert_allclose(state.tangent, K, rtol=1e-14, atol=1e-14)

    before = len(model.evaluated)
    state, second = solve_increment(state, Increment(simple_shear(0.2, 2)), model, G, SolverParams())
    assert second.converged
    assert len(model.evaluated) - before == len(second.residuals)
    assert not any(np.array_equal(F, model.evaluated[before - 1]) for F in model.evaluated[before:])


def stall_after_first_solve(monkeypatch, every=False):
    """Make every CG call after the first (or every call) report a stall with its result."""
    calls = []

    def stalled(operator, rhs, params, max_cg=None):
        dF, n = cg_solve(operator, rhs, params, max_cg)
        calls.append(n)
        if every or len(calls) > 1:
            raise CgStalled("capped", solution=dF, iterations=n)
        return dF, n

    monkeypatch.setattr("core.solver.cg_solve", stalled)
    return calls


def test_stalled_cg_below_newton_tolerance_is_accepted(monkeypatch, caplog):
    stall_after_first_solve(monkeypatch)
    shape = make_shape((5, 5, 5))
    model = HyperElasticModel(ParameterFields.uniform(SOFT))
    with caplog.at_level("WARNING", logger="core.solver"):
        state, report = solve(shape, model, build_projection(shape), simple_shear(0.3))

    assert report.converged
    assert report.newton_iterations == 1
    np.testing.assert_allclose(state.F, constant2(shape, simple_shear(0.3)), atol=1e-12)
    assert "CG stalled below the Newton tolerance" in caplog.text


def test_stalled_cg_on_a_large_update_is_raised(monkeypatch):
    stall_after_first_solve(monkeypatch)
    shape, model, G = cube_problem((9, 9), contrast=5.0)
    with pytest.raises(CgStalled) as err:
        solve(shape, model, G, simple_shear(0.2, 2))
    report = err.value.report
    assert isinstance(report, SolveReport)
    assert not report.converged
    assert len(report.residuals) == 1


def test_stalled_boundary_condition_solve_is_raised(monkeypatch):
    stall_after_first_solve(monkeypatch, every=True)
    shape = make_shape((5, 5, 5))
    model = HyperElasticModel(ParameterFields.uniform(SOFT))
    with pytest.raises(CgStalled) as err:
        solve(shape, model, build_projection(shape), simple_shear(0.3))
    assert err.value.report.residuals == []


# --- Desk-scale inclusion problem ---------------------------------------------

def test_cube_inclusion_single_shear_increment():
    shape, model, G = cube_problem((11, 11, 11))
    params = SolverParams()
    state, report = solve(shape, model, G, simple_shear(1.0), params)

    assert report.converged
    assert 1 <= report.newton_iterations <= 8
    res = report.residuals
    assert res[-1] < params.eta_newton
    assert len(res) >= 4
    assert res[-1] < res[-2] < res[-3]
    # quadratic rate over the last two updates
    for k in (-3, -2):
        assert res[k + 1] <= 50.0 * res[k] ** 2
    assert curl_residual(G, state.F) < 1e-10
    P, _, _ = model.evaluate(state.F, None)
    assert equilibrium_residual(G, P) < 10 * params.eta_newton
    np.testing.assert_allclose(field_mean(state.F), simple_shear(1.0), atol=1e-12)


@pytest.mark.slow
def test_even_grid_inclusion_agrees_with_odd_grids():
    mean_shear = {}
    for N in (11, 12, 13):
        shape, model, G = cube_problem((N, N, N))
        state, report = solve(shape, model, G, simple_shear(1.0))
        assert report.converged
        assert curl_residual(G, state.F) < 1e-10
        P, _, _ = model.evaluate(state.F, None)
        mean_shear[N] = field_mean(P)[0, 1]

    for N in (11, 13):
        assert abs(mean_shear[12] - mean_shear[N]) / abs(mean_shear[N]) < 0.25
