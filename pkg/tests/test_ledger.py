from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoito import functions, models
from monoito.boundary import in_band
from monoito.ledger import (
    LocalizationBox,
    assemble_ensemble,
    assemble_ledger,
    jump_equivalence_check,
    localize,
    residual_study,
)
from monoito.mollify import IncompleteTestFunction, TestFunction
from monoito.sde import BVDriverSpec, DiffusionSpec, simulate_ensemble, simulate_path, uniform_grid

from oracles import textbook_ito_terms

CIR = models.cir(1.0, 0.5, 0.5)


def _gbm_path(seed=1, n=200, drv=None):
    spec = models.gbm(0.05, 0.3)
    return spec, simulate_path(spec, drv or BVDriverSpec.zero(), [1.0], uniform_grid(1.0, n), seed)


def test_constant_function_all_zero():
    spec, p = _gbm_path()
    led = assemble_ledger(functions.constant(3.0), None, p, spec)
    for name in ("lhs", "term_dt", "term_bv", "term_jumps", "term_stoch", "residual"):
        assert getattr(led, name) == 0.0


def test_identity_telescopes():
    spec, p = _gbm_path()
    led = assemble_ledger(functions.linear([1.0]), None, p, spec)
    assert abs(led.residual) <= 1e-12 * max(1.0, abs(led.lhs))


@given(a=st.floats(-3, 3), c=st.floats(-3, 3), seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_affine_exact_with_jumps_and_bv(a, c, seed):
    f = functions.linear([a], c)
    drv = BVDriverSpec.schedule([(0.3, [0.4]), (0.71, [-1.0])], rate=[0.2])
    spec = models.brownian(1, 0.7, 0.1)
    p = simulate_path(spec, drv, [0.5], uniform_grid(1.0, 100), seed)
    led = assemble_ledger(f, None, p, spec)
    scale = max(1.0, abs(led.term_dt) + abs(led.term_bv) + abs(led.term_jumps) + abs(led.term_stoch))
    assert abs(led.residual) <= 1e-12 * scale


def test_matches_textbook_discretization():
    spec = models.gbm(0.05, 0.3)
    p = simulate_path(spec, BVDriverSpec.zero(), [1.0], uniform_grid(1.0, 300), 4)
    f = functions.quadratic_time(1.3, 0.4)
    led = assemble_ledger(f, None, p, spec)
    dt_o, st_o = textbook_ito_terms(
        p.grid, p.x[:, 0], p.db[:, 0],
        lambda t, x: 0.4 * x, lambda t, x: 2.6 * x + 0.4 * t, lambda t, x: 2.6,
        lambda t, x: 0.05 * x, lambda t, x: 0.3 * x)
    assert led.term_dt == pytest.approx(dt_o, rel=1e-12)
    assert led.term_stoch == pytest.approx(st_o, rel=1e-12)
    assert led.term_bv == 0.0 and led.term_jumps == 0.0


def test_square_bm_residual_statistics():
    spec = models.brownian(1)
    ens = simulate_ensemble(spec, BVDriverSpec.zero(), [0.0], uniform_grid(1.0, 1000), 1, 10_000)
    el = assemble_ensemble(functions.square(), None, ens, spec)
    s = el.stats()
    assert abs(s["mean_residual"]) < 3 * s["se_residual"]
    assert s["mean_abs_residual"] < 0.05


def test_ensemble_agrees_with_single_path_ledgers():
    f, surf = functions.x32_boundary(), functions.x32_boundary().surface
    ens = simulate_ensemble(CIR, BVDriverSpec.zero(), [0.25], uniform_grid(1.0, 200), 3, 5)
    el = assemble_ensemble(f, surf, ens, CIR)
    for k in range(5):
        led = assemble_ledger(f, surf, ens[k], CIR)
        assert el.residual[k] == pytest.approx(led.residual, abs=1e-13)
        assert el.skipped_steps[k] == led.skipped_steps


def test_skipped_steps_match_reclassification():
    f = functions.x32_boundary()
    spec = models.frozen(1)
    grid = uniform_grid(1.0, 50)
    p = simulate_path(spec, BVDriverSpec.zero(), [0.0], grid, 0)  # sits on the boundary
    led = assemble_ledger(f, f.surface, p, spec, band=1e-8)
    assert led.skipped_steps == 50 and not led.within_budget
    assert led.term_dt == 0.0  # no Hessian evaluated at the infinite point
    p = simulate_path(CIR, BVDriverSpec.zero(), [0.25], grid, 6)
    led = assemble_ledger(f, f.surface, p, CIR, band=0.05)
    expect = np.count_nonzero(in_band(f.surface, grid[:-1], p.x[:-1], 0.05))
    assert led.skipped_steps == expect


def test_missing_hessian_reported():
    f = TestFunction(1, lambda t, x: x[..., 0], lambda t, x: 0 * x[..., 0], lambda t, x: np.ones(np.shape(x)))
    spec, p = _gbm_path()
    with pytest.raises(IncompleteTestFunction):
        assemble_ledger(f, None, p, spec)


def test_localize_confined_path_untouched():
    spec, p = _gbm_path()
    q, tau = localize(p, 0.1)
    assert tau == p.horizon and np.array_equal(q.x, p.x)


def test_localize_deterministic_exit_time():
    spec = models.constant_drift([4.0])  # leaves [-2, 2] at t = 0.5
    grid = uniform_grid(1.0, 1000)
    p = simulate_path(spec, BVDriverSpec.zero(), [0.0], grid, 0)
    q, tau = localize(p, 0.5)
    assert abs(tau - 0.5) <= grid[1] + 1e-12
    assert not LocalizationBox(0.5).inside(tau, q.x[-1:])[0]


def test_localize_immediate_exit():
    spec, p = _gbm_path()
    q, tau = localize(p, 100.0)
    assert tau == 0.0 and q.n_steps == 0
    led = assemble_ledger(functions.square(), None, q, spec)
    assert led.n_steps == 0 and led.residual == 0.0


def test_localization_consistency():
    spec = models.brownian(1, 2.0)
    f = functions.square()
    ens = simulate_ensemble(spec, BVDriverSpec.zero(), [0.0], uniform_grid(1.0, 400), 9, 50)
    el = assemble_ensemble(f, None, ens, spec, delta=0.5)
    for k in range(50):
        p = ens[k]
        q, tau = localize(p, 0.5)
        a = assemble_ledger(f, None, q, spec)
        b = assemble_ledger(f, None, p, spec).truncate(q.n_steps, tau)
        assert a.residual == pytest.approx(b.residual, abs=1e-12)
        assert a.lhs == pytest.approx(b.lhs, abs=1e-12)
        assert el.tau[k] == tau
        assert el.residual[k] == pytest.approx(a.residual, abs=1e-12)


def test_jump_forms_no_jumps():
    spec, p = _gbm_path(drv=BVDriverSpec.schedule(rate=[0.1]))
    jc = jump_equivalence_check(functions.square(), p, spec)
    assert jc.discrepancy == 0.0 and jc.line_discrepancy == 0.0


def test_jump_forms_linear():
    spec = models.brownian(1)
    p = simulate_path(spec, BVDriverSpec.schedule([(0.5, [0.7])]), [0.0], uniform_grid(1.0, 10), 1)
    led = assemble_ledger(functions.linear([2.0]), None, p, spec)
    assert led.term_jumps == pytest.approx(2.0 * 0.7, abs=1e-14)
    assert jump_equivalence_check(functions.linear([2.0]), p, spec).passed()


def test_jump_hand_expansion():
    spec = models.brownian(1)
    p = simulate_path(spec, BVDriverSpec.schedule([(0.5, [1.0])]), [0.0], uniform_grid(1.0, 10), 2)
    k = int(np.flatnonzero(np.isclose(p.grid, 0.5))[0])
    a = p.x_left[k, 0]
    led = assemble_ledger(functions.square(), None, p, spec)
    assert led.term_jumps == pytest.approx(2 * a + 1, abs=1e-12)
    jc = jump_equivalence_check(functions.square(), p, spec)
    assert jc.line_discrepancy < 1e-10 and jc.passed()


@given(seed=st.integers(0, 5000))
@settings(max_examples=20, deadline=None)
def test_jump_forms_equivalent_on_random_paths(seed):
    spec = DiffusionSpec(2, lambda t, x: 0.1 * x, lambda t, x: 0.2 * np.broadcast_to(np.eye(2), np.shape(x) + (2,)),
                         lambda t, x: 1.0 + 0.5 * np.sin(x))
    drv = BVDriverSpec.schedule([(0.2, [0.3, -0.1]), (0.6, [-0.5, 0.4])], rate=[0.1, 0.0])
    p = simulate_path(spec, drv, [0.1, 0.2], uniform_grid(1.0, 50), seed)
    jc = jump_equivalence_check(functions.smooth_sin(), p, spec)
    assert jc.passed(1e-12)
    assert jc.line_discrepancy < 1e-10


def test_residual_study_linear_all_zero():
    st_ = residual_study(functions.linear([1.0]), None, models.brownian(1), BVDriverSpec.zero(), [0.0],
                         [1e-2, 5e-3], 200, 0)
    assert all(r["mean_abs_residual"] < 1e-12 for r in st_.rows)


def test_residual_study_smooth_order():
    st_ = residual_study(functions.square(), None, models.brownian(1), BVDriverSpec.zero(), [0.0],
                         [1e-2, 5e-3, 2.5e-3], 1000, 0)
    assert all(0.4 <= o <= 1.1 for o in st_.orders), st_.orders


def test_residual_study_boundary_case_decreases(tmp_path):
    f = functions.x32_boundary()
    st_ = residual_study(f, f.surface, CIR, BVDriverSpec.zero(), [0.25], [4e-3, 2e-3, 1e-3], 2000, 2)
    assert st_.strictly_decreasing
    st_.write_json(tmp_path / "study.json")


def test_residual_study_rejects_increasing_dts():
    with pytest.raises(ValueError):
        residual_study(functions.square(), None, models.brownian(1), BVDriverSpec.zero(), [0.0], [1e-3, 1e-2], 10, 0)


def test_ensemble_csv(tmp_path):
    spec = models.brownian(1)
    ens = simulate_ensemble(spec, BVDriverSpec.zero(), [0.0], uniform_grid(1.0, 20), 1, 4)
    el = assemble_ensemble(functions.square(), None, ens, spec)
    el.write_csv(tmp_path / "l.csv")
    rows = (tmp_path / "l.csv").read_text().strip().splitlines()
    assert len(rows) == 5 and rows[0].startswith("path,lhs")
