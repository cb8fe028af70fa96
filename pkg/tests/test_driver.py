"""Hybrid loop: growth conditions, metric updates, trace format, invariants."""

from __future__ import annotations

import math

import numpy as np
import pytest

from stochnewton.driver import (S4NConfig, Trace, TraceRecord, _pow0,
                                check_growth1, check_growth2, prox_grad_step,
                                s2nd_run, s4n_run, update_lambda)
from stochnewton.oracles import OracleState, power_sequence

from conftest import SCALAR_XSTAR


def make_oracle(N, grad=8, hess=4, seed=0, **kw):
    kw.setdefault("grad_cap", N)
    kw.setdefault("hess_cap", N)
    return OracleState(n_points=N, grad_size=grad, hess_size=hess,
                       rng=np.random.default_rng(seed), **kw)


# ---------------------------------------------------------------------------
# growth conditions and step helpers


def test_growth1_boundary():
    cfg = S4NConfig(nu_rule=power_sequence(0.0, 2.0),
                    eps1_rule=power_sequence(0.0, 2.0))
    assert check_growth1(0.84, 1.0, 5, cfg)
    assert check_growth1(0.85, 1.0, 5, cfg)  # boundary accepts
    assert not check_growth1(0.851, 1.0, 5, cfg)
    with pytest.raises(ValueError):
        check_growth1(0.1, -1e-9, 5, cfg)


def test_growth1_relaxation_decays():
    cfg = S4NConfig()  # nu = eps1 = 500 k^-1.1
    assert check_growth1(400.0, 1.0, 1, cfg)  # early slack is enormous
    assert not check_growth1(400.0, 1.0, 10**6, cfg)


def test_growth2_formula():
    cfg = S4NConfig(p_exp=0.5, beta=2.0, eps2_rule=power_sequence(1.0, 2.0))
    theta, res = 4.0, 0.25
    slack = 2.0 * theta ** 0.5 * res ** 0.5 + 1.0 / 9.0  # 2*2*0.5 + eps2(3)
    assert check_growth2(10.0 + slack - 1e-9, 10.0, theta, res, 3, cfg)
    assert not check_growth2(10.0 + slack + 1e-9, 10.0, theta, res, 3, cfg)


def test_pow0_convention():
    assert _pow0(0.0, 0.0) == 1.0
    assert _pow0(0.0, 0.5) == 0.0
    assert _pow0(2.0, 3.0) == 8.0


def test_prox_grad_step():
    x = np.array([1.0, 2.0])
    F = np.array([0.5, -0.5])
    assert np.allclose(prox_grad_step(x, F, 0.1), [0.95, 2.05])
    with pytest.raises(ValueError):
        prox_grad_step(x, F, 0.0)
    with pytest.raises(ValueError):
        prox_grad_step(x, F, 1.5)


def test_update_lambda_guards_and_blend():
    cfg = S4NConfig()  # clip (1e-3, 1e4), ema 0.5
    e = np.ones(3)
    assert update_lambda(0.7, None, None, e, e, cfg) == 0.7
    assert update_lambda(0.7, e, 2.0 * e, 3.0 * e, 2.0 * e, cfg) == 0.7  # flat g
    # secant 1e6 clips to 1e4 before the blend
    out = update_lambda(0.1, 0.0 * e, 0.0 * e, 1e6 / math.sqrt(3.0) * e,
                        1.0 / math.sqrt(3.0) * e, cfg)
    assert out == pytest.approx(0.5 * 0.1 + 0.5 * 1e4)
    # secant 1e-6 clips to 1e-3
    out = update_lambda(0.1, 0.0 * e, 0.0 * e, 1e-6 * e, 1.0 * e, cfg)
    assert out == pytest.approx(0.5 * 0.1 + 0.5 * 1e-3)


def test_update_lambda_ema_orientation():
    cfg = S4NConfig(lambda_ema=0.25)
    e = np.array([1.0])
    out = update_lambda(1.0, np.array([0.0]), np.array([0.0]), 3.0 * e, e, cfg)
    assert out == pytest.approx(0.75 * 1.0 + 0.25 * 3.0)


# ---------------------------------------------------------------------------
# configuration validation


def test_config_validation():
    with pytest.raises(ValueError):
        S4NConfig(eta=1.0)
    with pytest.raises(ValueError):
        S4NConfig(p_exp=0.0)
    with pytest.raises(ValueError):
        S4NConfig(beta=0.0)
    with pytest.raises(ValueError):
        S4NConfig(lambda_ema=1.5)
    with pytest.raises(ValueError):
        S4NConfig(lambda0=0.0)
    with pytest.raises(ValueError):
        S4NConfig(check_every=0)


def test_summability_checks():
    with pytest.raises(ValueError, match="nu_rule"):
        S4NConfig(nu_rule=power_sequence(1.0, 1.0))
    with pytest.raises(ValueError, match="eps2_rule"):
        S4NConfig(eps2_rule=power_sequence(1.0, 0.9))
    # eps1 exponent 1.5 is summable, but 1.5 * 0.5 <= 1 breaks growth-2 mode
    S4NConfig(eps1_rule=power_sequence(1.0, 1.5))
    with pytest.raises(ValueError, match="second growth"):
        S4NConfig(eps1_rule=power_sequence(1.0, 1.5), check_growth2=True)
    S4NConfig(eps1_rule=power_sequence(1.0, 2.5), check_growth2=True)
    # rules without a declared exponent are taken on trust
    S4NConfig(nu_rule=lambda k: 1.0 / (k + 1) ** 2)


def test_alpha_validation():
    cfg = S4NConfig(alpha=0.5)
    assert cfg.alpha_at(3) == 0.5
    cfg = S4NConfig(alpha=lambda k: 1.0 / (k + 1))
    assert cfg.alpha_at(0) == 1.0
    assert cfg.alpha_at(9) == 0.1
    with pytest.raises(ValueError):
        S4NConfig(alpha=0.0).alpha_at(0)
    with pytest.raises(ValueError):
        S4NConfig(alpha=lambda k: 2.0).alpha_at(0)


# ---------------------------------------------------------------------------
# trace serialization


def sample_trace():
    records = [
        TraceRecord(0, "init", 1.5, 0.9, 0.8, 0.8, 0.1, 8, 4, 0.2, 1.25),
        TraceRecord(1, "newton", 1.25, None, 0.4, 0.4, 0.11, 8, 4, 0.5, 2.5),
        TraceRecord(2, "prox", math.nan, 0.3, None, 0.4, 0.11, 27, 4, 0.9, None),
    ]
    return Trace(records, {"anything": 1})


def test_csv_round_trip():
    tr = sample_trace()
    back = Trace.from_csv_text(tr.csv_text())
    assert len(back.records) == 3
    for a, b in zip(tr.records, back.records):
        for name in ("k", "step_type", "full_res", "stoch_res", "theta", "lam",
                     "grad_size", "hess_size", "epochs", "wall_ms"):
            assert getattr(a, name) == getattr(b, name), name
    assert back.records[0].psi == 1.5
    assert math.isnan(back.records[2].psi)


def test_csv_without_timing_blanks_last_column():
    text = sample_trace().csv_text(with_timing=False)
    lines = text.strip().split("\n")
    assert lines[0].endswith(",wall_ms")
    assert all(line.endswith(",") for line in lines[1:])
    back = Trace.from_csv_text(text)
    assert all(r.wall_ms is None for r in back.records)


def test_csv_header_rejected():
    with pytest.raises(ValueError, match="header"):
        Trace.from_csv_text("a,b,c\n1,2,3\n")


def test_csv_file_round_trip(tmp_path):
    tr = sample_trace()
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    back = Trace.from_csv(path)
    assert back.records[1].stoch_res == 0.4


# ---------------------------------------------------------------------------
# the analytic scalar problem


def test_deterministic_run_reaches_scalar_optimum(scalar_problem):
    trace = s2nd_run(scalar_problem, S4NConfig(max_iters=100, stop_tol=1e-12))
    assert trace.summary["converged"]
    assert trace.summary["final_full_res"] <= 1e-10
    assert abs(trace.summary["x_final"][0] - SCALAR_XSTAR) <= 1e-10
    assert trace.summary["invariant_violations"] == 0
    # full batch on every row, full residual on every row
    assert all(r.grad_size == 1 for r in trace.records)
    assert all(r.full_res is not None for r in trace.records)


# ---------------------------------------------------------------------------
# loop behavior on a small stochastic instance


@pytest.fixture()
def small_run(tiny_problem):
    oracle = make_oracle(80, grad=8, hess=4, seed=1, grad_period=5, hess_period=3)
    cfg = S4NConfig(max_iters=60, stop_tol=0.0, check_every=7)
    return s4n_run(tiny_problem, oracle, cfg)


def test_trace_rows_follow_loop_invariants(small_run):
    records = small_run.records
    assert records[0].k == 0 and records[0].step_type == "init"
    assert records[0].theta == records[0].stoch_res  # default theta_0
    for prev, cur in zip(records, records[1:]):
        assert cur.k == prev.k + 1
        if cur.step_type == "newton":
            # theta ratchets to the accepted step's fresh-batch residual
            assert cur.theta == cur.stoch_res
        else:
            assert cur.step_type == "prox"
            assert cur.theta == prev.theta  # frozen on rejection
        assert cur.epochs >= prev.epochs
        assert cur.grad_size >= prev.grad_size
        assert 1e-3 <= cur.lam <= 1e4
    assert small_run.summary["invariant_violations"] == 0


def test_trace_full_res_cadence(small_run):
    for r in small_run.records:
        if r.k % 7 == 0 or r.k == small_run.records[-1].k:
            assert r.full_res is not None
        else:
            assert r.full_res is None


def test_step_counts_match_summary(small_run):
    newton = sum(1 for r in small_run.records if r.step_type == "newton")
    prox = sum(1 for r in small_run.records if r.step_type == "prox")
    assert small_run.summary["accepted_newton"] == newton
    assert small_run.summary["fallbacks"] == prox
    assert newton + prox == small_run.records[-1].k
    assert small_run.summary["iterations"] == small_run.records[-1].k


def test_same_seed_reproduces_bitwise(tiny_problem):
    def run(seed):
        oracle = make_oracle(80, grad=8, hess=4, seed=seed, grad_period=5,
                             hess_period=3)
        cfg = S4NConfig(max_iters=40, stop_tol=0.0)
        return s4n_run(tiny_problem, oracle, cfg)

    assert run(5).csv_text(with_timing=False) == run(5).csv_text(with_timing=False)
    assert run(5).csv_text(with_timing=False) != run(6).csv_text(with_timing=False)


def test_theta0_override(tiny_problem):
    oracle = make_oracle(80, seed=2)
    trace = s4n_run(tiny_problem, oracle, S4NConfig(max_iters=5, theta0=5.0))
    assert trace.records[0].theta == 5.0
    assert trace.summary["invariant_violations"] == 0


def test_force_fallback_never_accepts(tiny_problem):
    oracle = make_oracle(80, seed=3)
    cfg = S4NConfig(max_iters=25, stop_tol=0.0, force_fallback=True,
                    alpha=lambda k: min(1.0, 0.5 / math.sqrt(k + 1)))
    trace = s4n_run(tiny_problem, oracle, cfg)
    assert trace.summary["accepted_newton"] == 0
    assert all(r.step_type == "prox" for r in trace.records[1:])
    assert oracle.hess_evals == 0  # the Newton system is never formed
    assert trace.summary["invariant_violations"] == 0


def test_vr_mode_runs_clean(tiny_problem):
    oracle = make_oracle(80, grad=8, hess=8, seed=4, grad_period=0,
                         grad_cap=8, vr_enabled=True, vr_period=4)
    cfg = S4NConfig(max_iters=30, stop_tol=0.0)
    trace = s4n_run(tiny_problem, oracle, cfg)
    assert trace.summary["invariant_violations"] == 0
    assert oracle.vr_anchor_x is not None
    # anchor refreshes charge full passes, so epochs outpace plain sampling
    assert trace.summary["epochs"] > 30 * 8 / 80


def test_charge_full_residual_adds_epochs(scalar_problem):
    base = S4NConfig(max_iters=30, stop_tol=0.0)
    plain = s2nd_run(scalar_problem, base)
    charged = s2nd_run(scalar_problem,
                       S4NConfig(max_iters=30, stop_tol=0.0,
                                 charge_full_residual=True))
    assert charged.summary["epochs"] > plain.summary["epochs"]
    same = [r.psi for r in plain.records] == [r.psi for r in charged.records]
    assert same  # accounting only, identical iterates


def test_growth2_bound_holds_on_accepted_rows(tiny_problem):
    cfg = S4NConfig(max_iters=30, stop_tol=0.0, check_growth2=True,
                    eps1_rule=power_sequence(500.0, 2.5))
    trace = s2nd_run(tiny_problem, cfg)
    records = trace.records
    assert any(r.step_type == "newton" for r in records[1:])
    for prev, cur in zip(records, records[1:]):
        if cur.step_type != "newton":
            continue
        bound = (prev.psi + cfg.beta * prev.theta ** 0.5 * cur.stoch_res ** 0.5
                 + cfg.eps2_rule(prev.k))
        assert cur.psi <= bound + 1e-12
    assert trace.summary["invariant_violations"] == 0


def test_stop_tol_terminates_early(tiny_problem):
    trace = s2nd_run(tiny_problem, S4NConfig(max_iters=200, stop_tol=1e-8))
    assert trace.summary["converged"]
    assert trace.summary["stop_reason"] == "stop_tol"
    assert trace.summary["final_full_res"] <= 1e-8
    assert trace.records[-1].k < 200


def test_max_iters_row_count(tiny_problem):
    oracle = make_oracle(80, seed=6)
    trace = s4n_run(tiny_problem, oracle, S4NConfig(max_iters=12, stop_tol=0.0))
    assert len(trace.records) == 13
    assert trace.summary["stop_reason"] == "max_iters"
    assert not trace.summary["converged"]
