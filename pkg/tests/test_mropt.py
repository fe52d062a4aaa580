import logging

import numpy as np
import pytest

from core.multiresolution import (
    GridError,
    GridHierarchy,
    UnsupportedGridError,
    forward_full,
    make_scheme,
    predict_multilevel,
    prediction_matrix,
)
from core.mropt import (
    AuxiliaryObjective,
    LevelRecord,
    MrOptConfig,
    MrOptReport,
    OracleUnavailableError,
    attach_reference,
    build_auxiliary_objective,
    coarse_pinned_mask,
    decay_rates_from_steps,
    estimate_error_decay_rates,
    prediction_operator,
    reduce_quadratic,
    run_direct,
    run_mropt,
)
from core.optimizers import CountedObjective, OptimizerConfig, OptimizerStatus, factorize_spd, solve_quadratic_direct
from core.problems import make_problem, problem_dimension
from core.processing import RunSpec, build_config, validate_run_spec


def _config(problem, degree, **kwargs):
    return MrOptConfig(scheme=make_scheme(degree), hierarchy=problem.hierarchy,
                       boundary_mask=problem.boundary_mask, **kwargs)


def _random_admissible(problem, rng):
    z = problem.initial_guess.copy()
    z[problem.free_indices] = rng.normal(size=problem.free_indices.size)
    return z


def _oracle_run(name, degree, j0, levels, tol_m=1e-12):
    problem = make_problem(name, GridHierarchy(j0=j0, levels=levels, dim=problem_dimension(name)))
    config = _config(problem, degree, tol_m=tol_m, optimizer="quasi_newton", oracle_mode=True)
    return problem, run_mropt(problem.objective, problem.initial_guess, config)


# --- Configuration ---

def test_config_validation():
    """Bad tolerances, unknown optimizers, too-coarse grids and mismatched masks are refused."""
    hierarchy = GridHierarchy(j0=4, levels=2)
    with pytest.raises(ValueError):
        MrOptConfig(scheme=make_scheme(1), hierarchy=hierarchy, tol_m=0.0)
    with pytest.raises(ValueError):
        MrOptConfig(scheme=make_scheme(1), hierarchy=hierarchy, optimizer="simplex")
    with pytest.raises(UnsupportedGridError):
        MrOptConfig(scheme=make_scheme(5), hierarchy=hierarchy)
    with pytest.raises(GridError):
        MrOptConfig(scheme=make_scheme(1), hierarchy=hierarchy, boundary_mask=np.zeros(5, dtype=bool))


def test_coarse_pinned_mask_follows_node_identity():
    """A coarse node is pinned exactly when the finest node at the same position is."""
    problem = make_problem("poisson2d", GridHierarchy(j0=2, levels=2, dim=2))
    coarse = coarse_pinned_mask(problem.boundary_mask, problem.hierarchy, 0).reshape(3, 3)
    expected = np.ones((3, 3), dtype=bool)
    expected[1, 1] = False
    np.testing.assert_array_equal(coarse, expected)
    assert not coarse_pinned_mask(None, problem.hierarchy, 1).any()


# --- Prediction operators ---

def test_prediction_operator_is_identity_on_finest_level():
    hierarchy = GridHierarchy(j0=4, levels=2, dim=2)
    operator = prediction_operator(hierarchy, make_scheme(3), 2)
    np.testing.assert_array_equal(operator.toarray(), np.eye(hierarchy.size(2)))


def test_prediction_operator_2d_is_tensor_product(rng):
    """The 2D operator equals predicting along columns and then along rows."""
    hierarchy = GridHierarchy(j0=4, levels=1, dim=2)
    scheme = make_scheme(3)
    coarse = rng.normal(size=(5, 5))
    lifted = prediction_operator(hierarchy, scheme, 0) @ coarse.ravel()
    columns = predict_multilevel(coarse, scheme, 1)
    expected = predict_multilevel(columns.T, scheme, 1).T
    np.testing.assert_allclose(lifted.reshape(9, 9), expected, atol=1e-13)


@pytest.mark.parametrize("dim", [1, 2])
def test_nesting_of_prediction_ranges(scheme, dim, rng):
    """Lifting through level k+1 gives the same finest vector as lifting directly."""
    hierarchy = GridHierarchy(j0=8, levels=3, dim=dim)
    for level in range(hierarchy.finest):
        one_step = prediction_matrix(hierarchy.cells(level), scheme, 1)
        if dim == 2:
            one_step = np.kron(one_step, one_step)
        eps = rng.normal(size=hierarchy.size(level))
        direct = prediction_operator(hierarchy, scheme, level) @ eps
        nested = prediction_operator(hierarchy, scheme, level + 1) @ (one_step @ eps)
        assert np.max(np.abs(direct - nested)) <= 1e-12 * (1 + np.max(np.abs(direct)))


# --- Auxiliary objectives ---

@pytest.mark.parametrize("name", ["bvp1d", "poisson2d", "mins", "morebv"])
def test_auxiliary_at_zero_is_current_value(name, rng):
    """F_k(0) = F(z) on every level of every problem."""
    problem = make_problem(name, GridHierarchy(j0=4, levels=2, dim=problem_dimension(name)))
    config = _config(problem, 3)
    z = _random_admissible(problem, rng)
    for level in range(3):
        aux = build_auxiliary_objective(problem.objective, z, level, config)
        assert aux(np.zeros(aux.dim)) == problem.objective(z)


def test_auxiliary_forwards_one_call_per_evaluation(rng):
    """Without a quadratic form each auxiliary call is exactly one call of F."""
    problem = make_problem("mins", GridHierarchy(j0=4, levels=1, dim=2))
    aux = build_auxiliary_objective(problem.objective, problem.initial_guess, 0, _config(problem, 1))
    assert isinstance(aux, AuxiliaryObjective)
    assert aux.dim == 9
    before = problem.objective.count
    for _ in range(7):
        aux(rng.normal(size=9))
    assert problem.objective.count - before == 7
    assert aux.count == 7


def test_auxiliary_on_finest_level_without_mask(rng):
    """At k = L with nothing pinned, F_L(eps) is F(z + eps)."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=2))
    config = MrOptConfig(scheme=make_scheme(3), hierarchy=problem.hierarchy)
    z = rng.normal(size=17)
    eps = rng.normal(size=17)
    aux = build_auxiliary_objective(problem.objective, z, 2, config)
    assert aux(eps) == pytest.approx(problem.objective(z + eps), rel=1e-12)


def test_auxiliary_of_linear_objective():
    """For F(z) = sum(z), F_k(eps) - F_k(0) is the sum of the lifted perturbation."""
    hierarchy = GridHierarchy(j0=4, levels=3)
    scheme = make_scheme(1)
    config = MrOptConfig(scheme=scheme, hierarchy=hierarchy)
    objective = CountedObjective(lambda z: float(np.sum(z)), dim=hierarchy.size(3))
    z = np.linspace(-1.0, 1.0, hierarchy.size(3))
    eps_rng = np.random.default_rng(7)
    for level in range(4):
        aux = build_auxiliary_objective(objective, z, level, config)
        eps = eps_rng.normal(size=hierarchy.size(level))
        expected = np.sum(predict_multilevel(eps, scheme, 3 - level))
        assert aux(eps) - aux(np.zeros_like(eps)) == pytest.approx(expected, abs=1e-10)


def test_auxiliary_rejects_wrong_current_point():
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=1))
    with pytest.raises(GridError):
        build_auxiliary_objective(problem.objective, np.zeros(5), 0, _config(problem, 1))


# --- Quadratic reduction ---

def test_reduce_quadratic_on_finest_level(rng):
    """At k = L the reduced form is the free block of (A, b - A z)."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=1))
    form = problem.objective.quadratic_form
    z = _random_admissible(problem, rng)
    free = problem.free_indices
    reduced = reduce_quadratic(form, z, 1, _config(problem, 1))
    np.testing.assert_allclose(reduced.A.toarray(), form.A.toarray()[np.ix_(free, free)])
    np.testing.assert_allclose(reduced.b, (form.b - form.A @ z)[free], rtol=1e-12, atol=1e-9)
    assert reduced.c == pytest.approx(form.value(z))


@pytest.mark.parametrize("degree", [1, 3, 5])
def test_reduced_matrices_are_symmetric_positive_definite(degree, rng):
    problem = make_problem("bvp1d", GridHierarchy(j0=8, levels=3))
    form = problem.objective.quadratic_form
    z = _random_admissible(problem, rng)
    config = _config(problem, degree)
    for level in range(4):
        reduced = reduce_quadratic(form, z, level, config, check=False)
        dense = reduced.A.toarray()
        assert np.max(np.abs(dense - dense.T)) <= 1e-10
        # Raises NotPositiveDefiniteError otherwise
        factorize_spd(reduced.A)


@pytest.mark.parametrize("degree", [1, 3])
def test_fast_path_agrees_with_black_box(degree, rng):
    """
    Reduced (A_k, b_k, c_k) and the lifted objective agree on random inputs at
    every level, and both count one evaluation of F per call.
    """
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=4))
    config = _config(problem, degree)
    z = _random_admissible(problem, rng)
    for level in range(5):
        slow = build_auxiliary_objective(problem.objective, z, level, config, use_fast_path=False)
        fast = build_auxiliary_objective(problem.objective, z, level, config, use_fast_path=True)
        assert fast.quadratic_form is not None and slow.quadratic_form is None
        inputs = rng.normal(size=(100, slow.dim))

        base_calls = problem.objective.count
        lifted = [slow(eps) for eps in inputs]
        assert problem.objective.count - base_calls == 100

        base_calls = problem.objective.count
        reduced = [fast(eps) for eps in inputs]
        assert problem.objective.count - base_calls == 100

        np.testing.assert_allclose(reduced, lifted, rtol=1e-8)


def test_fast_path_threshold_falls_back_to_black_box(caplog):
    """Above fast_path_max_dof the auxiliary calls F itself and a warning is logged."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=1))
    config = _config(problem, 1, tol_m=1e-3, fast_path_max_dof=5,
                     optimizer_config=OptimizerConfig(tol_x=1e-3))
    with caplog.at_level(logging.WARNING):
        report = run_mropt(problem.objective, problem.initial_guess, config)
    assert "fast_path_max_dof" in caplog.text
    assert problem.objective.count == report.total_evals


@pytest.mark.parametrize("optimizer", ["pattern_search", "quasi_newton"])
def test_reported_evals_match_objective_counter(optimizer):
    """
    With the quadratic fast path on (the default), report counts still equal
    the calls registered by the problem's own counter, for MR/OPT and direct.
    """
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=2))
    config = _config(problem, 3, tol_m=1e-4, optimizer=optimizer, optimizer_config=OptimizerConfig(tol_x=1e-4))
    assert config.quadratic_fast_path

    before = problem.objective.count
    report = run_mropt(problem.objective, problem.initial_guess, config)
    assert report.total_evals > 0
    assert problem.objective.count - before == report.total_evals

    before = problem.objective.count
    direct = run_direct(problem.objective, problem.initial_guess, config)
    assert direct.evals > 0
    assert problem.objective.count - before == direct.evals


# --- Driver ---

def test_single_level_equals_direct_run():
    """With L = 0 the sweep is one direct optimizer call."""
    problem = make_problem("bvp1d", GridHierarchy(j0=8, levels=0))
    config = _config(problem, 1, tol_m=1e-4, optimizer_config=OptimizerConfig(tol_x=1e-4))
    report = run_mropt(problem.objective, problem.initial_guess, config)
    direct = run_direct(problem.objective, problem.initial_guess, config)
    assert len(report.records) == 1
    assert report.decay_rates == []
    assert not report.stopped_early
    np.testing.assert_array_equal(report.solution, direct.x)
    assert report.total_evals == direct.evals


def test_optimal_start_stops_at_coarsest_level():
    """Starting at the minimizer, the first step is zero and the sweep ends there."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=3))
    config = _config(problem, 3, oracle_mode=True)
    report = run_mropt(problem.objective, problem.reference_solution, config)
    assert len(report.records) == 1
    assert report.stopped_early
    assert report.records[0].step_norm <= 1e-9
    assert report.total_evals == 0


def test_pinned_entries_never_change():
    problem = make_problem("mins", GridHierarchy(j0=4, levels=1, dim=2))
    config = _config(problem, 1, tol_m=1e-3, optimizer_config=OptimizerConfig(tol_x=1e-3))
    report = run_mropt(problem.objective, problem.initial_guess, config)
    mask = problem.boundary_mask
    for z in report.solutions:
        np.testing.assert_array_equal(z[mask], problem.initial_guess[mask])


def _assert_non_increasing(values):
    for previous, current in zip(values[:-1], values[1:]):
        assert current <= previous + 1e-10 * (1 + abs(previous)), f"F went up from {previous} to {current}"


@pytest.mark.parametrize("name", ["bvp1d", "poisson2d", "mins", "morebv"])
def test_objective_values_never_increase(name):
    """F(z^{L,k+1}) <= F(z^{L,k}) along a short sweep."""
    problem = make_problem(name, GridHierarchy(j0=4, levels=1, dim=problem_dimension(name)))
    config = _config(problem, 3, tol_m=1e-3, optimizer_config=OptimizerConfig(tol_x=1e-3))
    report = run_mropt(problem.objective, problem.initial_guess, config)
    values = report.objective_values
    assert len(values) == len(report.records) + 1
    _assert_non_increasing(values)


def test_steps_preserve_finer_details():
    """Level k only changes the coarse part: details at levels >= k are those of the start."""
    scheme = make_scheme(3)
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=3))
    hierarchy = problem.hierarchy
    config = MrOptConfig(scheme=scheme, hierarchy=hierarchy, boundary_mask=problem.boundary_mask,
                         tol_m=1e-12, oracle_mode=True)
    start = np.zeros(hierarchy.size(3))
    start[1:-1] = np.sin(np.arange(1, 32))
    report = run_mropt(problem.objective, start, config)
    initial_rep = forward_full(start, hierarchy, scheme)
    for k, z in enumerate(report.solutions[1:]):
        rep = forward_full(z, hierarchy, scheme)
        scale = 1 + np.max(np.abs(z))
        for level in range(k, hierarchy.finest):
            assert np.max(np.abs(rep.detail(level) - initial_rep.detail(level))) <= 1e-10 * scale


def test_oracle_final_level_is_exact():
    """The last oracle level solves the full problem, so the result is the minimizer."""
    problem, report = _oracle_run("bvp1d", 3, 4, 3)
    assert not report.stopped_early
    assert len(report.records) == 4
    assert report.oracle and report.total_evals == 0
    reference = problem.reference_solution
    assert np.max(np.abs(report.solution - reference)) <= 1e-9 * (1 + np.max(np.abs(reference)))


def test_oracle_requires_quadratic_form():
    problem = make_problem("mins", GridHierarchy(j0=4, levels=1, dim=2))
    config = _config(problem, 1, oracle_mode=True)
    with pytest.raises(OracleUnavailableError):
        run_mropt(problem.objective, problem.initial_guess, config)


def test_run_rejects_wrong_start_shape():
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=1))
    with pytest.raises(GridError):
        run_mropt(problem.objective, np.zeros(5), _config(problem, 1))


def test_fatal_status_gives_partial_report(caplog):
    """A non-finite objective stops the sweep after the first level and keeps z^{L,0}."""
    hierarchy = GridHierarchy(j0=4, levels=2)
    objective = CountedObjective(lambda z: np.nan, dim=hierarchy.size(2))
    config = MrOptConfig(scheme=make_scheme(1), hierarchy=hierarchy)
    report = run_mropt(objective, np.zeros(hierarchy.size(2)), config)
    assert report.status is OptimizerStatus.NON_FINITE
    assert len(report.records) == 1
    assert len(report.solutions) == 1
    assert "partial report" in caplog.text


def test_evaluation_cap_is_reported_and_run_continues(caplog):
    """Hitting max_evals on a level is recorded and the sweep goes on."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=2))
    config = _config(problem, 1, optimizer_config=OptimizerConfig(max_evals=40))
    report = run_mropt(problem.objective, problem.initial_guess, config)
    assert report.status is OptimizerStatus.MAX_EVALS
    assert all(record.evals <= 40 for record in report.records)
    assert "continuing" in caplog.text


def test_progress_callback_sees_every_level():
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=2))
    seen = []
    run_mropt(problem.objective, problem.initial_guess, _config(problem, 1, tol_m=1e-12, oracle_mode=True),
              on_level=seen.append)
    assert [record.level for record in seen] == [0, 1, 2]


def test_direct_oracle_matches_linear_solve():
    problem = make_problem("poisson2d", GridHierarchy(j0=4, levels=1, dim=2))
    result = run_direct(problem.objective, problem.initial_guess, _config(problem, 1, oracle_mode=True))
    assert result.evals == 0
    np.testing.assert_allclose(result.x, problem.reference_solution, atol=1e-10)


def test_direct_run_is_deterministic():
    """Two fresh problem instances give the same evaluation count."""
    counts = []
    for _ in range(2):
        problem = make_problem("bvp1d", GridHierarchy(j0=8, levels=0))
        config = _config(problem, 1, optimizer_config=OptimizerConfig(tol_x=1e-4))
        counts.append(run_direct(problem.objective, problem.initial_guess, config).evals)
    assert counts[0] == counts[1]


def test_mropt_beats_direct_on_small_bvp():
    """On J = 16 the coarse-to-fine sweep with cubic prediction needs fewer evaluations."""
    evals = {}
    for label, hierarchy in (("direct", GridHierarchy(j0=16, levels=0)), ("mropt", GridHierarchy(j0=4, levels=2))):
        problem = make_problem("bvp1d", hierarchy)
        config = _config(problem, 3 if label == "mropt" else 1, tol_m=1e-3,
                         optimizer_config=OptimizerConfig(tol_x=1e-3))
        if label == "direct":
            evals[label] = run_direct(problem.objective, problem.initial_guess, config).evals
        else:
            evals[label] = run_mropt(problem.objective, problem.initial_guess, config).total_evals
    assert evals["mropt"] < evals["direct"]


# --- Decay rates ---

def test_decay_rates_of_geometric_steps():
    assert decay_rates_from_steps([1.0, 0.25, 0.0625]) == [pytest.approx(2.0), pytest.approx(2.0)]


def test_undefined_decay_rates_are_flagged(caplog):
    """A zero norm gives no rate on either side and a warning."""
    rates = decay_rates_from_steps([1.0, 0.0, 0.5])
    assert rates == [None, None]
    assert "undefined" in caplog.text


def test_rate_for_level_alignment():
    """r_k belongs to level k; level 0 has none."""
    records = [LevelRecord(level=k, dof=1, evals=1, step_norm=4.0 ** -k, objective=0.0, perturbation_norm=0.0)
               for k in range(3)]
    report = MrOptReport(records=records, decay_rates=decay_rates_from_steps([r.step_norm for r in records]))
    assert report.rate_for_level(0) is None
    assert report.rate_for_level(1) == pytest.approx(2.0)
    assert report.rate_for_level(2) == pytest.approx(2.0)


def test_evals_per_dof():
    record = LevelRecord(level=1, dof=4, evals=10, step_norm=0.0, objective=0.0, perturbation_norm=0.0)
    assert record.evals_per_dof == 2.5
    empty = LevelRecord(level=0, dof=0, evals=1, step_norm=0.0, objective=0.0, perturbation_norm=0.0)
    assert empty.evals_per_dof == 0.0


def test_bvp1d_linear_prediction_rates():
    """Linear prediction on the 1D BVP: rates settle at 2 on j0=4, L=5."""
    _, report = _oracle_run("bvp1d", 1, 4, 5)
    assert report.rate_for_level(4) == pytest.approx(2.00, abs=0.3)
    assert report.rate_for_level(5) == pytest.approx(1.98, abs=0.3)


def test_bvp1d_cubic_prediction_rate():
    _, report = _oracle_run("bvp1d", 3, 4, 5)
    assert report.rate_for_level(5) == pytest.approx(3.80, abs=0.7)


def test_bvp1d_quintic_prediction_rate():
    _, report = _oracle_run("bvp1d", 5, 8, 4)
    assert report.rate_for_level(4) == pytest.approx(6.0, abs=1.0)


def test_poisson2d_linear_prediction_rates():
    _, report = _oracle_run("poisson2d", 1, 4, 4)
    assert report.rate_for_level(3) == pytest.approx(2.0, abs=0.3)
    assert report.rate_for_level(4) == pytest.approx(2.0, abs=0.3)


@pytest.mark.parametrize("degree", [1, 3])
def test_bvp1d_error_decay(degree):
    """
    Distance to the minimizer shrinks like h^(n+1).

    Ladder j0=4, L=6 (J_L = 256). The final level is exact and left out, so the
    rates checked are those of levels 4 and 5; coarser ones are pre-asymptotic.
    """
    problem, report = _oracle_run("bvp1d", degree, 4, 6)
    attach_reference(report, problem.reference_solution)
    assert report.records[-1].error_vs_reference <= 1e-9 * (1 + np.max(np.abs(problem.reference_solution)))
    rates = estimate_error_decay_rates(report, problem.reference_solution)
    assert len(rates) == 6
    for rate in rates[-3:-1]:
        assert rate == pytest.approx(degree + 1, abs=0.5)


# --- Long benchmark runs ---

@pytest.mark.slow
@pytest.mark.parametrize("degree", [3, 5])
def test_mropt_beats_direct_on_bvp1d_pattern_search(degree):
    direct_problem = make_problem("bvp1d", GridHierarchy(j0=64, levels=0))
    settings = dict(tol_m=1e-5, optimizer_config=OptimizerConfig(tol_x=1e-5))
    direct = run_direct(direct_problem.objective, direct_problem.initial_guess,
                        _config(direct_problem, 1, **settings))
    j0, levels = (4, 4) if degree == 3 else (8, 3)
    problem = make_problem("bvp1d", GridHierarchy(j0=j0, levels=levels))
    report = run_mropt(problem.objective, problem.initial_guess, _config(problem, degree, **settings))
    assert report.total_evals < direct.evals


@pytest.mark.slow
@pytest.mark.parametrize("degree", [3, 5])
def test_mropt_beats_direct_on_mins_quasi_newton(degree):
    settings = dict(tol_m=1e-5, optimizer="quasi_newton", optimizer_config=OptimizerConfig(tol_x=1e-5))
    direct_problem = make_problem("mins", GridHierarchy(j0=32, levels=0, dim=2))
    direct = run_direct(direct_problem.objective, direct_problem.initial_guess,
                        _config(direct_problem, 1, **settings))
    j0, levels = (4, 3) if degree == 3 else (8, 2)
    problem = make_problem("mins", GridHierarchy(j0=j0, levels=levels, dim=2))
    report = run_mropt(problem.objective, problem.initial_guess, _config(problem, degree, **settings))
    assert report.total_evals < direct.evals


@pytest.mark.slow
@pytest.mark.parametrize("degree", [1, 3])
def test_mins_rate_is_limited_by_regularity(degree):
    """The minimal surface has corner singularities, so cubic prediction does no better than linear."""
    problem = make_problem("mins", GridHierarchy(j0=4, levels=3, dim=2))
    config = _config(problem, degree, tol_m=1e-8, optimizer="quasi_newton",
                     optimizer_config=OptimizerConfig(tol_x=1e-8))
    report = run_mropt(problem.objective, problem.initial_guess, config)
    assert report.rate_for_level(3) == pytest.approx(2.0, abs=0.5)


@pytest.mark.slow
def test_morebv_steps_decay_only_with_cubic_prediction():
    """
    On MOREBV (j0=4, L=3, quasi-Newton) linear prediction leaves the step size
    flat across levels while cubic prediction makes it shrink.
    """
    steps = {}
    rates = {}
    for degree in (1, 3):
        problem = make_problem("morebv", GridHierarchy(j0=4, levels=3))
        config = _config(problem, degree, tol_m=1e-6, optimizer="quasi_newton",
                         optimizer_config=OptimizerConfig(tol_x=1e-6))
        report = run_mropt(problem.objective, problem.initial_guess, config)
        assert not report.stopped_early
        steps[degree] = report.step_norms
        rates[degree] = report.decay_rates

    # Linear: no level shrinks the step by even a factor of two
    assert len(rates[1]) == 3
    assert all(rate is not None and rate < 1.0 for rate in rates[1])
    assert steps[1][-1] >= 0.25 * steps[1][0]

    # Cubic: every level shrinks it by more than a factor of two
    assert all(rate is not None and rate > 1.5 for rate in rates[3])
    assert steps[3][-1] < 0.1 * steps[1][-1]


@pytest.mark.slow
@pytest.mark.parametrize("name", ["bvp1d", "poisson2d", "mins", "morebv"])
def test_objective_values_never_increase_at_desk_scale(name, tmp_path):
    """F(z^{L,k}) is non-increasing over the full default ladder of each problem."""
    spec = validate_run_spec(RunSpec(problem=name, n=3, optimizer="quasi_newton", out=tmp_path))
    problem = make_problem(name, GridHierarchy(j0=spec.j0, levels=spec.levels, dim=problem_dimension(name)))
    report = run_mropt(problem.objective, problem.initial_guess, build_config(spec, problem))
    assert report.records[0].level == 0
    _assert_non_increasing(report.objective_values)


def test_reference_solution_solves_interior_system():
    """The stored reference solves the interior linear system with zero boundary values."""
    problem = make_problem("bvp1d", GridHierarchy(j0=4, levels=2))
    form = problem.objective.quadratic_form
    free = problem.free_indices
    expected = np.zeros(form.dim)
    expected[free] = solve_quadratic_direct(form.A[free][:, free], form.b[free])
    np.testing.assert_allclose(problem.reference_solution, expected, atol=1e-12)
