import logging
import math
import statistics
from collections.abc import Callable
from dataclasses import replace

import numpy as np
import pytest
import pytest_check

from road_dl.admm import (
    AdmmConfig,
    RoadState,
    Variant,
    eval_lagrangian,
    extract_model,
    fit_road,
    init_state,
    is_rank_one,
    normalized_residuals,
    project_noise_ball,
    residuals,
    run,
    solve_x3,
    step_exact,
    step_exact_noisy,
    step_inexact,
)
from road_dl.errors import DimensionMismatchError, PenaltyBoundError
from road_dl.linalg import frob_norm, l21_norm, nuclear_norm, rank_one_project, svd_thin
from road_dl.synthetic import SparsityModel, gen_ground_truth, recovery_error


def _zero_state(variant: Variant, k: int, m: int, n: int) -> RoadState:
    blocks = np.zeros((k, m, n))
    return RoadState(variant=variant, x1=blocks.copy(), x2=blocks.copy(), x3=blocks.copy(),
                     z1=blocks.copy(), z2=blocks.copy(), z3=np.zeros((m, n)),
                     lam1=blocks.copy(), lam2=blocks.copy(), lam3=np.zeros((m, n)),
                     w=np.zeros((m, n)) if variant is Variant.EXACT_NOISY else None)


def _random_state(rng: np.random.Generator, k: int, m: int, n: int) -> RoadState:
    x2 = np.stack([rank_one_project(rng.standard_normal((m, n))) for _ in range(k)])
    return RoadState(variant=Variant.INEXACT, x1=rng.standard_normal((k, m, n)), x2=x2,
                     x3=rng.standard_normal((k, m, n)), z1=rng.standard_normal((k, m, n)),
                     z2=rng.standard_normal((k, m, n)), z3=rng.standard_normal((m, n)),
                     lam1=rng.standard_normal((k, m, n)), lam2=rng.standard_normal((k, m, n)),
                     lam3=rng.standard_normal((m, n)))


def _assert_states_equal(first: RoadState, second: RoadState) -> None:
    for name in ("x1", "x2", "x3", "z1", "z2", "z3", "lam1", "lam2", "lam3"):
        np.testing.assert_array_equal(getattr(first, name), getattr(second, name), err_msg=name)


def test_inexact_penalties_must_exceed_bound() -> None:
    with pytest.raises(PenaltyBoundError, match=r"rho1 = 100 must exceed beta1 \+ 2 = 102"):
        AdmmConfig(variant=Variant.INEXACT, k_atoms=2, rho1=100.0, beta1=100.0)


def test_unsafe_penalties_warn_when_allowed(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING):
        cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=2, rho3=251.0, allow_unsafe_penalties=True)
    assert cfg.rho3 == 251.0
    assert "rho3 = 251 must exceed beta3 + 2 = 252" in caplog.text


def test_exact_variants_ignore_inexact_bounds() -> None:
    cfg = AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=2, rho1=1.0)
    assert cfg.rho == 10.0


@pytest.mark.parametrize("kwargs, message", [
    pytest.param({"k_atoms": 0}, "atoms", id="atoms"),
    pytest.param({"max_iter": 0}, "iterations", id="max-iter"),
    pytest.param({"tol_primal": 0.0}, "Tolerances", id="tol"),
    pytest.param({"rho": -1.0}, "rho must be positive", id="rho"),
    pytest.param({"epsilon_noise": -0.1}, "epsilon", id="epsilon"),
])
def test_config_validation(kwargs: dict, message: str) -> None:
    settings = {"variant": Variant.EXACT_NOISEFREE, "k_atoms": 2}
    settings.update(kwargs)
    with pytest.raises(ValueError, match=message):
        AdmmConfig(**settings)


def test_fixed_rho_shares_one_penalty() -> None:
    cfg = AdmmConfig.fixed_rho(4, rho=320.0, max_iter=5)
    assert cfg.variant is Variant.INEXACT
    assert (cfg.rho1, cfg.rho2, cfg.rho3) == (320.0, 320.0, 320.0)
    assert cfg.max_iter == 5
    assert cfg.as_dict()["variant"] == "inexact"


def test_init_state_is_deterministic() -> None:
    y = np.random.default_rng(0).standard_normal((5, 7))
    cfg = AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=3, seed=11)
    _assert_states_equal(init_state(y, cfg), init_state(y, cfg))


def test_init_state_single_block() -> None:
    y = np.random.default_rng(1).standard_normal((4, 6))
    state = init_state(y, AdmmConfig(variant=Variant.EXACT_NOISY, k_atoms=1, seed=3))
    np.testing.assert_array_equal(state.x1, state.x3)
    np.testing.assert_array_equal(state.x2, state.x3)
    assert not np.any(state.lam1) and not np.any(state.lam2) and not np.any(state.lam3)
    np.testing.assert_array_equal(state.w, y)
    assert state.iteration == 0


def test_init_state_blocks_are_rank_one() -> None:
    y = np.random.default_rng(2).standard_normal((6, 9))
    state = init_state(y, AdmmConfig(variant=Variant.INEXACT, k_atoms=4))
    for block in state.x2:
        s = svd_thin(block).s
        assert s[1] < 1e-10 * s[0]


def test_init_state_projects_data_onto_distinct_atoms() -> None:
    y = np.random.default_rng(3).standard_normal((6, 9))
    state = init_state(y, AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=5, seed=4))
    atoms = np.stack([svd_thin(block).u[:, 0] for block in state.x3], axis=1)
    for k, block in enumerate(state.x3):
        np.testing.assert_allclose(block, np.outer(atoms[:, k], atoms[:, k] @ y), atol=1e-12)
    overlaps = np.abs(atoms.T @ atoms) - np.eye(5)
    assert np.max(overlaps) < 1.0 - 1e-6


@pytest.mark.parametrize("variant, step", [
    pytest.param(Variant.EXACT_NOISEFREE, step_exact, id="exact"),
    pytest.param(Variant.EXACT_NOISY, step_exact_noisy, id="noisy"),
    pytest.param(Variant.INEXACT, step_inexact, id="inexact"),
])
def test_zero_state_is_fixed_point(variant: Variant, step) -> None:
    state = _zero_state(variant, 2, 3, 4)
    new_state = step(state, np.zeros((3, 4)), AdmmConfig(variant=variant, k_atoms=2))
    _assert_states_equal(new_state, state)
    assert new_state.iteration == 1


def test_step_rejects_wrong_variant() -> None:
    state = _zero_state(Variant.INEXACT, 2, 3, 4)
    with pytest.raises(ValueError, match="inexact variant"):
        step_inexact(state, np.zeros((3, 4)), AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=2))


def test_step_rejects_shape_mismatch() -> None:
    state = _zero_state(Variant.EXACT_NOISEFREE, 2, 3, 4)
    with pytest.raises(DimensionMismatchError):
        step_exact(state, np.zeros((4, 3)), AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=2))


def test_solve_x3_single_block() -> None:
    rng = np.random.default_rng(3)
    b1, b2, b3 = rng.standard_normal((1, 3, 2)), rng.standard_normal((1, 3, 2)), rng.standard_normal((3, 2))
    x3 = solve_x3(b1, b2, b3, 2.0, 3.0, 5.0)
    np.testing.assert_allclose(x3[0], (2.0 * b1[0] + 3.0 * b2[0] + 5.0 * b3) / 10.0, atol=1e-14)


@pytest.mark.parametrize("rhos", [pytest.param((1.0, 1.0, 1.0), id="unit"),
                                  pytest.param((2.0, 3.0, 5.0), id="mixed")])
def test_solve_x3_matches_least_squares(rhos: tuple[float, float, float]) -> None:
    rng = np.random.default_rng(4)
    k, m, n = 2, 2, 2
    b1, b2, b3 = rng.standard_normal((k, m, n)), rng.standard_normal((k, m, n)), rng.standard_normal((m, n))
    rho1, rho2, rho3 = rhos
    size = k * m * n
    system = np.vstack([np.sqrt(rho1) * np.eye(size), np.sqrt(rho2) * np.eye(size),
                        np.sqrt(rho3) * np.kron(np.ones((1, k)), np.eye(m * n))])
    target = np.concatenate([np.sqrt(rho1) * b1.ravel(), np.sqrt(rho2) * b2.ravel(), np.sqrt(rho3) * b3.ravel()])
    expected = np.linalg.lstsq(system, target, rcond=None)[0]
    np.testing.assert_allclose(solve_x3(b1, b2, b3, rho1, rho2, rho3, k_atoms=k).ravel(), expected, atol=1e-10)


def test_solve_x3_equal_penalties_match_kronecker_operator() -> None:
    rng = np.random.default_rng(5)
    k, m, n = 3, 2, 3
    b1, b2, b3 = rng.standard_normal((k, m, n)), rng.standard_normal((k, m, n)), rng.standard_normal((m, n))
    operator = 0.5 * (np.eye(k * m * n) - np.kron(np.ones((k, k)), np.eye(m * n)) / (k + 2))
    expected = operator @ (b1 + b2 + b3).ravel()
    np.testing.assert_allclose(solve_x3(b1, b2, b3, 4.0, 4.0, 4.0).ravel(), expected, atol=1e-12)


def test_solve_x3_rejects_bad_input() -> None:
    blocks = np.zeros((2, 2, 2))
    with pytest.raises(DimensionMismatchError):
        solve_x3(blocks, blocks, np.zeros((3, 2)), 1.0, 1.0, 1.0)
    with pytest.raises(DimensionMismatchError, match="Expected 3 blocks"):
        solve_x3(blocks, blocks, np.zeros((2, 2)), 1.0, 1.0, 1.0, k_atoms=3)
    with pytest.raises(ValueError, match="positive"):
        solve_x3(blocks, blocks, np.zeros((2, 2)), 0.0, 1.0, 1.0)


def _check_local_minimum(objective: Callable[[np.ndarray], float], best: np.ndarray,
                         rng: np.random.Generator, trials: int = 1000) -> None:
    value = objective(best)
    for _ in range(trials):
        pytest_check.greater_equal(objective(best + 1e-3 * rng.standard_normal(best.shape)), value - 1e-9)


def _check_rank_one_minimum(objective: Callable[[np.ndarray], float], best: np.ndarray,
                            rng: np.random.Generator, trials: int = 1000) -> None:
    svd = svd_thin(best)
    u, row = svd.u[:, 0], svd.s[0] * svd.vt[0]
    value = objective(best)
    for _ in range(trials):
        nearby = np.outer(u + 1e-3 * rng.standard_normal(u.shape), row + 1e-3 * rng.standard_normal(row.shape))
        pytest_check.greater_equal(objective(nearby), value - 1e-9)
        pytest_check.greater_equal(objective(rank_one_project(rng.standard_normal(best.shape))), value - 1e-9)


def test_inexact_x1_update_minimizes_its_subproblem() -> None:
    rng = np.random.default_rng(6)
    k, m, n = 2, 4, 6
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k)
    state = _random_state(rng, k, m, n)
    new_state = step_inexact(state, y, cfg)
    for idx in range(k):
        centre = state.x3[idx] + state.z1[idx] - state.lam1[idx]

        def objective(x: np.ndarray, centre: np.ndarray = centre) -> float:
            return l21_norm(x) + cfg.rho1 / 2 * frob_norm(x - centre) ** 2

        _check_local_minimum(objective, new_state.x1[idx], rng)


def test_inexact_x2_update_minimizes_over_rank_one_matrices() -> None:
    rng = np.random.default_rng(17)
    k, m, n = 2, 4, 6
    y = rng.standard_normal((m, n))
    state = _random_state(rng, k, m, n)
    new_state = step_inexact(state, y, AdmmConfig(variant=Variant.INEXACT, k_atoms=k))
    for idx in range(k):
        centre = state.x3[idx] + state.z2[idx] - state.lam2[idx]
        _check_rank_one_minimum(lambda x, centre=centre: frob_norm(x - centre) ** 2, new_state.x2[idx], rng)


def test_inexact_x3_update_minimizes_its_subproblem() -> None:
    rng = np.random.default_rng(18)
    k, m, n = 3, 4, 5
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k)
    state = _random_state(rng, k, m, n)
    new = step_inexact(state, y, cfg)

    def objective(x3: np.ndarray) -> float:
        return (cfg.rho1 * float(np.sum((new.x1 - x3 - state.z1 + state.lam1) ** 2))
                + cfg.rho2 * float(np.sum((new.x2 - x3 - state.z2 + state.lam2) ** 2))
                + cfg.rho3 * float(np.sum((y - x3.sum(axis=0) - state.z3 + state.lam3) ** 2)))

    _check_local_minimum(objective, new.x3, rng)


def test_inexact_slack_updates_minimize_their_subproblems() -> None:
    rng = np.random.default_rng(19)
    k, m, n = 2, 3, 4
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k)
    state = _random_state(rng, k, m, n)
    new = step_inexact(state, y, cfg)
    targets = [(cfg.beta1, cfg.rho1, new.x1 - new.x3 + state.lam1, new.z1),
               (cfg.beta2, cfg.rho2, new.x2 - new.x3 + state.lam2, new.z2),
               (cfg.beta3, cfg.rho3, y - new.x3.sum(axis=0) + state.lam3, new.z3)]
    for beta, rho, centre, z in targets:

        def objective(candidate: np.ndarray, beta: float = beta, rho: float = rho,
                      centre: np.ndarray = centre) -> float:
            return beta * float(np.sum(candidate ** 2)) + rho * float(np.sum((centre - candidate) ** 2))

        _check_local_minimum(objective, z, rng)


@pytest.mark.parametrize("seed", range(50))
def test_slack_shrinkage_matches_least_squares(seed: int) -> None:
    rng = np.random.default_rng(200 + seed)
    k, m, n = (int(value) for value in rng.integers(1, 5, size=3))
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k, rho1=float(rng.uniform(203.0, 400.0)),
                     rho2=float(rng.uniform(303.0, 500.0)), rho3=float(rng.uniform(253.0, 450.0)))
    state = _random_state(rng, k, m, n)
    new = step_inexact(state, y, cfg)
    targets = [(cfg.beta1, cfg.rho1, new.x1 - new.x3 + state.lam1, new.z1),
               (cfg.beta2, cfg.rho2, new.x2 - new.x3 + state.lam2, new.z2),
               (cfg.beta3, cfg.rho3, y - new.x3.sum(axis=0) + state.lam3, new.z3)]
    for beta, rho, centre, z in targets:
        system = np.array([[np.sqrt(beta)], [np.sqrt(rho)]])
        rhs = np.vstack([np.zeros(centre.size), np.sqrt(rho) * centre.ravel()])
        expected = np.linalg.lstsq(system, rhs, rcond=None)[0].reshape(centre.shape)
        np.testing.assert_allclose(z, expected, atol=1e-12)


def test_exact_blocks_minimize_their_subproblems() -> None:
    rng = np.random.default_rng(20)
    k, m, n = 2, 4, 6
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=k)
    state = replace(_random_state(rng, k, m, n), variant=Variant.EXACT_NOISEFREE)
    new = step_exact(state, y, cfg)
    for idx in range(k):
        shrink_centre = state.x3[idx] + state.lam1[idx]
        rank_centre = state.x3[idx] + state.lam2[idx]

        def shrink_objective(x: np.ndarray, centre: np.ndarray = shrink_centre) -> float:
            return l21_norm(x) + cfg.rho / 2 * frob_norm(centre - x) ** 2

        _check_local_minimum(shrink_objective, new.x1[idx], rng)
        _check_rank_one_minimum(lambda x, centre=rank_centre: frob_norm(centre - x) ** 2, new.x2[idx], rng)

    def coupling_objective(x3: np.ndarray) -> float:
        return (float(np.sum((x3 - new.x1 + state.lam1) ** 2)) + float(np.sum((x3 - new.x2 + state.lam2) ** 2))
                + float(np.sum((x3.sum(axis=0) - y + state.lam3) ** 2)))

    _check_local_minimum(coupling_objective, new.x3, rng)


def test_inexact_step_keeps_multiplier_identity_and_rank() -> None:
    rng = np.random.default_rng(7)
    y = rng.standard_normal((5, 8))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=3, seed=1)
    state = init_state(y, cfg)
    for _ in range(10):
        state = step_inexact(state, y, cfg)
        np.testing.assert_allclose(state.lam1, cfg.beta1 / cfg.rho1 * state.z1, atol=1e-10)
        np.testing.assert_allclose(state.lam2, cfg.beta2 / cfg.rho2 * state.z2, atol=1e-10)
        np.testing.assert_allclose(state.lam3, cfg.beta3 / cfg.rho3 * state.z3, atol=1e-10)
        assert all(is_rank_one(block) for block in state.x2)


@pytest.mark.parametrize("seed", range(20))
def test_inexact_lagrangian_descends(seed: int) -> None:
    rng = np.random.default_rng(100 + seed)
    m, n, k = (int(value) for value in rng.integers(2, 9, size=3))
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k, seed=seed, max_iter=40, tol_primal=1e-14, tol_dual=1e-14)
    _, report = run(y, cfg)
    history = report.lagrangian_history
    assert len(history) == report.iterations
    for before, after in zip(history, history[1:]):
        pytest_check.less_equal(after, before + 1e-9 * max(1.0, abs(before)))


def test_noise_ball_projection() -> None:
    rng = np.random.default_rng(8)
    y = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(project_noise_ball(y, y, 0.5), y)
    np.testing.assert_allclose(project_noise_ball(y + 1.0, y, 0.0), y)
    direction = rng.standard_normal((3, 4))
    direction /= frob_norm(direction)
    epsilon = 0.3
    w = project_noise_ball(y + 2 * epsilon * direction, y, epsilon)
    assert frob_norm(w - y) == pytest.approx(epsilon, rel=1e-12)
    np.testing.assert_allclose(w, y + epsilon * direction, atol=1e-14)
    with pytest.raises(ValueError, match="non-negative"):
        project_noise_ball(y, y, -1.0)


def test_zero_radius_noisy_step_matches_exact_step() -> None:
    rng = np.random.default_rng(9)
    y = rng.standard_normal((4, 5))
    noisy_cfg = AdmmConfig(variant=Variant.EXACT_NOISY, k_atoms=2, epsilon_noise=0.0, seed=2)
    exact_cfg = AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=2, seed=2)
    noisy = init_state(y, noisy_cfg)
    exact = init_state(y, exact_cfg)
    for _ in range(5):
        noisy = step_exact_noisy(noisy, y, noisy_cfg)
        exact = step_exact(exact, y, exact_cfg)
        np.testing.assert_allclose(noisy.w, y)
        np.testing.assert_allclose(noisy.x3, exact.x3, atol=1e-12)
        np.testing.assert_allclose(noisy.lam3, exact.lam3, atol=1e-12)


def test_lagrangian_of_zero_state() -> None:
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=2)
    state = _zero_state(Variant.INEXACT, 2, 3, 4)
    assert eval_lagrangian(state, np.zeros((3, 4)), cfg) == 0.0
    y = np.arange(12.0).reshape(3, 4)
    assert eval_lagrangian(state, y, cfg) == pytest.approx(cfg.rho3 / 2 * np.sum(y ** 2), rel=1e-14)


def test_lagrangian_matches_term_sum() -> None:
    rng = np.random.default_rng(10)
    k, m, n = 3, 4, 5
    y = rng.standard_normal((m, n))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=k)
    state = _random_state(rng, k, m, n)
    expected = 0.0
    for idx in range(k):
        expected += sum(np.linalg.norm(state.x1[idx][:, col]) for col in range(n))
        expected += cfg.beta1 / 2 * np.sum(state.z1[idx] ** 2) + cfg.beta2 / 2 * np.sum(state.z2[idx] ** 2)
        expected += cfg.rho1 / 2 * (np.sum((state.x1[idx] - state.x3[idx] - state.z1[idx] + state.lam1[idx]) ** 2)
                                    - np.sum(state.lam1[idx] ** 2))
        expected += cfg.rho2 / 2 * (np.sum((state.x2[idx] - state.x3[idx] - state.z2[idx] + state.lam2[idx]) ** 2)
                                    - np.sum(state.lam2[idx] ** 2))
    total = sum(state.x3[idx] for idx in range(k))
    expected += cfg.beta3 / 2 * np.sum(state.z3 ** 2)
    expected += cfg.rho3 / 2 * (np.sum((y - total - state.z3 + state.lam3) ** 2) - np.sum(state.lam3 ** 2))
    assert eval_lagrangian(state, y, cfg) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_lagrangian_is_infinite_off_the_rank_one_set() -> None:
    rng = np.random.default_rng(11)
    state = _random_state(rng, 2, 3, 4)
    state.x2[0] = rng.standard_normal((3, 4))
    assert math.isinf(eval_lagrangian(state, np.zeros((3, 4)), AdmmConfig(variant=Variant.INEXACT, k_atoms=2)))


def test_residuals_at_fixed_point_and_feasible_state() -> None:
    rng = np.random.default_rng(12)
    blocks = np.stack([rank_one_project(rng.standard_normal((3, 4))) for _ in range(2)])
    y = blocks.sum(axis=0)
    state = _zero_state(Variant.EXACT_NOISEFREE, 2, 3, 4)
    state.x1, state.x2, state.x3 = blocks.copy(), blocks.copy(), blocks.copy()
    assert residuals(state, state, y) == (0.0, 0.0)
    prev = _zero_state(Variant.EXACT_NOISEFREE, 2, 3, 4)
    primal, dual = residuals(prev, state, y)
    assert primal == 0.0
    assert dual == pytest.approx(frob_norm(blocks.reshape(2 * 3, 4)))


def test_residuals_match_stacked_norms() -> None:
    rng = np.random.default_rng(13)
    k, m, n = 2, 3, 4
    y = rng.standard_normal((m, n))
    prev, cur = _random_state(rng, k, m, n), _random_state(rng, k, m, n)
    primal_blocks = [cur.x1[idx] - cur.x3[idx] - cur.z1[idx] for idx in range(k)]
    primal_blocks += [cur.x2[idx] - cur.x3[idx] - cur.z2[idx] for idx in range(k)]
    primal_blocks.append(y - cur.x3.sum(axis=0) - cur.z3)
    dual_blocks = [cur.z1[idx] - prev.z1[idx] for idx in range(k)] + [cur.z2[idx] - prev.z2[idx] for idx in range(k)]
    dual_blocks.append(cur.z3 - prev.z3)
    primal, dual = residuals(prev, cur, y)
    assert primal == pytest.approx(np.linalg.norm(np.hstack(primal_blocks)), rel=1e-12)
    assert dual == pytest.approx(np.linalg.norm(np.hstack(dual_blocks)), rel=1e-12)
    primal_sq, dual_sq = normalized_residuals(prev, cur, y)
    assert primal_sq == pytest.approx(primal ** 2 / np.sum(cur.x3 ** 2), rel=1e-12)
    assert dual_sq == pytest.approx(
        dual ** 2 / (np.sum(cur.z1 ** 2) + np.sum(cur.z2 ** 2) + np.sum(cur.z3 ** 2)), rel=1e-12)


def test_run_on_zero_data_converges_immediately() -> None:
    cfg = AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=3)
    state, report = run(np.zeros((4, 5)), cfg)
    assert report.converged
    assert report.iterations == 1
    model = extract_model(state, np.zeros((4, 5)), report=report)
    assert model.dead_atoms == frozenset({0, 1, 2})
    assert not np.any(model.coefficients)
    np.testing.assert_allclose(np.linalg.norm(model.dictionary, axis=0), 1.0)


def test_run_scalar_problem_reaches_data() -> None:
    y = np.array([[2.0]])
    gaps: list[float] = []
    state, report = run(y, AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=1),
                        callback=lambda current: gaps.append(abs(current.x2[0, 0, 0] - 2.0)))
    assert next(idx for idx, gap in enumerate(gaps, start=1) if gap <= 1e-12) <= 5
    assert report.converged
    assert report.iterations <= 30
    assert report.primal_residual_history[-1] <= 1e-6
    assert report.dual_residual_history[-1] <= 1e-6
    assert state.x2[0, 0, 0] == pytest.approx(2.0, rel=1e-2)


def test_run_callback_sees_every_iterate() -> None:
    y = np.random.default_rng(14).standard_normal((4, 6))
    seen: list[int] = []
    _, report = run(y, AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=2, max_iter=7),
                    callback=lambda state: seen.append(state.iteration))
    assert seen == list(range(1, report.iterations + 1))
    assert len(report.primal_residual_history) == report.iterations
    assert not report.lagrangian_history


def test_extract_model_of_single_outer_product() -> None:
    state = _zero_state(Variant.EXACT_NOISEFREE, 1, 3, 2)
    state.x2[0] = 2.0 * np.outer([1.0, 0.0, 0.0], [1.0, 0.0])
    model = extract_model(state, np.zeros((3, 2)))
    np.testing.assert_allclose(model.dictionary[:, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(model.coefficients[0], [2.0, 0.0])
    assert not model.dead_atoms


def test_extract_model_reconstructs_block_sum() -> None:
    rng = np.random.default_rng(15)
    state = _random_state(rng, 4, 5, 7)
    state.x2[2] = -state.x2[2]
    model = extract_model(state, np.zeros((5, 7)))
    total = state.x2.sum(axis=0)
    assert frob_norm(model.reconstruct() - total) <= 1e-8 * frob_norm(total)
    np.testing.assert_allclose(np.linalg.norm(model.dictionary, axis=0), 1.0, atol=1e-10)
    for atom in model.dictionary.T:
        assert atom[np.argmax(np.abs(atom))] > 0


def test_fit_road_is_deterministic() -> None:
    y = np.random.default_rng(16).standard_normal((6, 20))
    cfg = AdmmConfig(variant=Variant.INEXACT, k_atoms=4, max_iter=20, seed=5)
    first, second = fit_road(y, cfg), fit_road(y, cfg)
    np.testing.assert_array_equal(first.dictionary, second.dictionary)
    np.testing.assert_array_equal(first.coefficients, second.coefficients)
    assert first.solver == "road-inexact"
    assert first.parameters["rho1"] == "210.0"


def _check_trivial_split(seed: int, splits: int) -> None:
    rng = np.random.default_rng(seed)
    m, n, k = (int(value) for value in rng.integers(1, 9, size=3))
    k = min(k, 4)
    mu = float(rng.uniform(0.1, 2.0))
    y = rng.standard_normal((m, n))

    def cost(a: np.ndarray) -> float:
        return l21_norm(a) + mu * nuclear_norm(a)

    weights = rng.dirichlet(np.ones(k))
    assert sum(cost(weight * y) for weight in weights) == pytest.approx(cost(y), abs=1e-9)
    for _ in range(splits):
        parts = [rng.standard_normal((m, n)) for _ in range(k - 1)]
        parts.append(y - sum(parts, np.zeros((m, n))))
        pytest_check.greater_equal(sum(cost(part) for part in parts), cost(y) - 1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_trivial_split_is_optimal(seed: int) -> None:
    _check_trivial_split(seed, splits=100)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_trivial_split_is_optimal_exhaustive(seed: int) -> None:
    _check_trivial_split(seed, splits=1000)


def _planted_errors(cfg_for_seed: Callable[[int], AdmmConfig], n: int = 300) -> list[float]:
    errors = []
    for seed in range(10):
        truth = gen_ground_truth(16, 32, n, SparsityModel.fixed(3), seed=seed)
        model = fit_road(truth.y_observed, cfg_for_seed(seed))
        errors.append(recovery_error(model.dictionary, truth.d0))
        if model.report.converged:
            pytest_check.less_equal(model.report.primal_residual_history[-1], 1e-6)
            pytest_check.less_equal(model.report.dual_residual_history[-1], 1e-6)
    return errors


@pytest.mark.slow
def test_exact_solver_recovers_planted_dictionary() -> None:
    errors = _planted_errors(lambda seed: AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=32, seed=seed))
    assert statistics.median(errors) < 0.01


@pytest.mark.slow
def test_exact_solver_needs_enough_samples() -> None:
    errors = _planted_errors(lambda seed: AdmmConfig(variant=Variant.EXACT_NOISEFREE, k_atoms=32, seed=seed), n=100)
    assert statistics.median(errors) > 0.05


@pytest.mark.slow
@pytest.mark.parametrize("make_config", [
    pytest.param(lambda seed: AdmmConfig(variant=Variant.INEXACT, k_atoms=32, max_iter=2000, seed=seed),
                 id="separate-penalties"),
    pytest.param(lambda seed: AdmmConfig.fixed_rho(32, max_iter=2000, seed=seed), id="fixed-penalty"),
])
def test_inexact_solver_stays_away_from_planted_dictionary(make_config: Callable[[int], AdmmConfig]) -> None:
    assert statistics.median(_planted_errors(make_config)) > 5e-3
