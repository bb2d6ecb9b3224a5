import math

import numpy as np
import pytest

from qrngcert.calibration import (PROB_FLOOR, CalibrationProblem, CalibrationResult, Dataset, Parameter,
                                  corrected_plan, fit_systematic, minimum_nll, negative_log_likelihood)
from qrngcert.circuit import EVEN_SELF_ADJOINT, ArrangementSpec, ErrorModel, compose_arrangement, perturb
from qrngcert.exceptions import CalibrationRefused, InvalidArgumentError
from qrngcert.matrix import identity_deviation
from qrngcert.mesh import UX, ux_plan
from qrngcert.simulator import CountsTable, basis_state, sample_trials

PLAN = ux_plan("primed")
B12, B23, BPRIME, PD = 0, 1, 2, 3
E1, E2 = basis_state(3, 0), basis_state(3, 1)
ESA4 = ArrangementSpec(4, EVEN_SELF_ADJOINT)


def simulate(offsets: dict, trials=10**6, seed=1, spec=None, psi=E1):
    truth = perturb(PLAN, ErrorModel(systematic_theta=offsets), 0)
    dev = truth if spec is None else compose_arrangement([truth] * spec.copies, spec)
    return Dataset(psi, sample_trials(dev, psi, trials, seed), spec)


def test_nll_at_exact_expectations_is_the_minimum():
    ds = Dataset(E1, CountsTable(1000, 1000, (250, 500, 250), 0))
    prob = CalibrationProblem(PLAN, [ds], [Parameter(B23, "theta")])
    assert negative_log_likelihood(prob, [0.0]) == pytest.approx(minimum_nll(prob), rel=1e-12)
    # 250 ln 4 + 500 ln 2 + 250 ln 4
    assert minimum_nll(prob) == pytest.approx(1500 * math.log(2))


def test_nll_invariant_under_dataset_order():
    a, b = simulate({}, 1000, 1), simulate({}, 1000, 2, spec=ESA4)
    params = [Parameter(B12, "theta")]
    x = [0.013]
    assert negative_log_likelihood(CalibrationProblem(PLAN, [a, b], params), x) == pytest.approx(
        negative_log_likelihood(CalibrationProblem(PLAN, [b, a], params), x), rel=1e-14)


def test_nll_empty_datasets_is_zero():
    assert negative_log_likelihood(CalibrationProblem(PLAN, [], [Parameter(B12, "theta")]), [0.1]) == 0.0


def test_nll_candidate_must_be_in_bounds():
    prob = CalibrationProblem(PLAN, [], [Parameter(B12, "theta", bounds=(-0.1, 0.1))])
    with pytest.raises(InvalidArgumentError):
        negative_log_likelihood(prob, [0.2])
    with pytest.raises(InvalidArgumentError):
        negative_log_likelihood(prob, [0.0, 0.0])


def test_nll_zero_probability_is_floored():
    ds = Dataset(E2, CountsTable(10, 10, (4, 2, 4), 0))
    prob = CalibrationProblem(PLAN, [ds], [Parameter(B12, "theta")])
    val = negative_log_likelihood(prob, [0.0])
    assert math.isfinite(val)
    assert val == pytest.approx(-2 * math.log(PROB_FLOOR) + 8 * math.log(2), rel=1e-6)


@pytest.mark.parametrize("gate", [B12, B23, BPRIME])
def test_perturbing_any_angle_raises_nll(gate):
    ds = simulate({}, seed=gate + 10)
    prob = CalibrationProblem(PLAN, [ds], [Parameter(gate, "theta")])
    assert negative_log_likelihood(prob, [0.02]) > negative_log_likelihood(prob, [0.0])
    assert negative_log_likelihood(prob, [-0.02]) > negative_log_likelihood(prob, [0.0])


@pytest.mark.parametrize("kwargs", [
    {"free_parameters": [Parameter(9, "theta")]},
    {"free_parameters": [Parameter(PD, "theta", mode=0)]},
    {"free_parameters": [Parameter(PD, "phi")]},
    {"free_parameters": [Parameter(B12, "phi", mode=1)]},
    {"free_parameters": [Parameter(B12, "theta", bounds=(0.1, -0.1))]},
    {"free_parameters": [Parameter(B12, "theta"), Parameter(B12, "theta")]},
    {"datasets": [Dataset(basis_state(2, 0), CountsTable(1, 1, (1, 0), 0))]},
])
def test_problem_validation(kwargs):
    base = {"nominal": PLAN, "datasets": [], "free_parameters": [Parameter(B12, "theta")]}
    with pytest.raises(InvalidArgumentError):
        CalibrationProblem(**{**base, **kwargs})


def test_fit_needs_data_and_parameters():
    with pytest.raises(InvalidArgumentError):
        fit_systematic(CalibrationProblem(PLAN, [], [Parameter(B12, "theta")]), seed=0)
    with pytest.raises(InvalidArgumentError):
        fit_systematic(CalibrationProblem(PLAN, [simulate({}, 100)], []), seed=0)


def test_nominal_data_gives_near_zero_estimates():
    datasets = [simulate({}, seed=1), simulate({}, seed=2, psi=E2), simulate({}, seed=3, spec=ESA4)]
    params = [Parameter(B12, "theta"), Parameter(B23, "theta"), Parameter(BPRIME, "theta")]
    res = fit_systematic(CalibrationProblem(PLAN, datasets, params), seed=0)
    assert res.converged
    assert np.all(np.abs(res.estimates) <= 0.003)


def test_recovers_injected_b23_offset():
    datasets = [simulate({B23: 0.02}, seed=1), simulate({B23: 0.02}, seed=2, spec=ESA4)]
    res = fit_systematic(CalibrationProblem(PLAN, datasets, [Parameter(B23, "theta")]), seed=0)
    assert res.converged
    assert res.estimates[0] == pytest.approx(0.02, abs=0.005)
    assert res.half_widths[0] < 0.005
    assert res.objective_value == pytest.approx(
        negative_log_likelihood(CalibrationProblem(PLAN, datasets, [Parameter(B23, "theta")]), res.estimates))


def test_fit_is_deterministic():
    datasets = [simulate({B12: -0.01}, 10**5, seed=4)]
    prob = CalibrationProblem(PLAN, datasets, [Parameter(B12, "theta"), Parameter(B23, "theta")])
    a, b = fit_systematic(prob, seed=7), fit_systematic(prob, seed=7)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert a.to_dict() == b.to_dict()


def test_unobservable_trailing_phase_is_flagged():
    prob = CalibrationProblem(PLAN, [simulate({}, seed=5)],
                              [Parameter(B12, "theta"), Parameter(PD, "phi", mode=2)])
    res = fit_systematic(prob, seed=0)
    assert res.unidentified == ("gate3.phi[2]",)
    assert math.isinf(res.half_widths[1]) and math.isfinite(res.half_widths[0])
    assert res.to_dict()["half_widths_95"][1] == math.inf


def test_amplified_data_narrows_b12_half_width_at_equal_budget():
    params = [Parameter(B12, "theta")]
    fwd_only = [simulate({B12: 0.02}, 2 * 10**6, seed=1)]
    mixed = [simulate({B12: 0.02}, 10**6, seed=1), simulate({B12: 0.02}, 10**6, seed=2, spec=ESA4)]
    w_fwd = fit_systematic(CalibrationProblem(PLAN, fwd_only, params), seed=0).half_widths[0]
    w_mix = fit_systematic(CalibrationProblem(PLAN, mixed, params), seed=0).half_widths[0]
    assert w_mix < w_fwd
    # per-trial Fisher information: 4 forward, about 11.8 for the four-copy arrangement
    assert w_fwd / w_mix == pytest.approx(math.sqrt((4 + 11.8) / 8), rel=0.05)


def _result(params, estimates, converged=True, unidentified=()):
    return CalibrationResult(tuple(params), np.asarray(estimates, dtype=float), 0.0, 1, converged,
                             np.zeros(len(params)), tuple(unidentified))


def test_corrected_plan_zero_estimates_unchanged():
    assert corrected_plan(PLAN, _result([Parameter(B12, "theta")], [0.0])) == PLAN


def test_corrected_plan_closes_exact_offsets():
    offsets = {B12: 0.03, B23: -0.02}
    params = [Parameter(B12, "theta"), Parameter(B23, "theta"), Parameter(PD, "phi", mode=1)]
    model = ErrorModel(systematic_theta=offsets, systematic_phi={PD: [0.0, 0.05, 0.0]})
    fixed = corrected_plan(PLAN, _result(params, [0.03, -0.02, 0.05]))
    realized = perturb(fixed, model, 0).unitary
    assert identity_deviation(UX.conj().T @ realized) <= 1e-6


def test_partial_correction_still_improves():
    model = ErrorModel(systematic_theta={B12: 0.03})
    before = identity_deviation(UX.conj().T @ perturb(PLAN, model, 0).unitary)
    fixed = corrected_plan(PLAN, _result([Parameter(B12, "theta")], [0.02]))
    after = identity_deviation(UX.conj().T @ perturb(fixed, model, 0).unitary)
    assert after < before


def test_corrected_plan_refuses_unconverged_and_skips_unidentified():
    p = [Parameter(B12, "phi"), Parameter(PD, "phi", mode=2)]
    with pytest.raises(CalibrationRefused):
        corrected_plan(PLAN, _result(p, [0.1, 0.1], converged=False))
    fixed = corrected_plan(PLAN, _result(p, [0.1, 0.1], unidentified=["gate3.phi[2]"]))
    assert fixed.gates[B12].phi == pytest.approx(PLAN.gates[B12].phi - 0.1)
    assert fixed.gates[PD] == PLAN.gates[PD]


def test_fixed_transmission_is_used_in_the_model():
    rc = perturb(PLAN, ErrorModel(transmission=0.5), 0)
    ds = Dataset(E1, sample_trials(rc, E1, 10**5, 3))
    prob = CalibrationProblem(PLAN, [ds], [Parameter(B12, "theta")], transmission=0.5)
    res = fit_systematic(prob, seed=0, n_starts=2)
    assert res.converged and abs(res.estimates[0]) < 0.01
