import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrngcert.circuit import (ALTERNATING, EVEN_SELF_ADJOINT, EXPLICIT, MIRRORS_AT_BACK, TRUNCATE_SIGMAS,
                              ArrangementSpec, ErrorModel, RealizedCircuit, build_arrangement, chain,
                              compose_arrangement, independent_mirror, mirror_circuit, perturb)
from qrngcert.exceptions import InvalidArgumentError
from qrngcert.matrix import identity_deviation
from qrngcert.mesh import UX, BeamSplitter, CircuitPlan, PhaseDiagonal, ux_plan

PLAN = ux_plan("primed")
B12, B23, BPRIME, PD = 0, 1, 2, 3


def test_zero_model_reproduces_nominal():
    rc = perturb(PLAN, ErrorModel(), seed=1)
    np.testing.assert_allclose(rc.unitary, UX, atol=1e-14)
    assert rc.survival == 1.0
    assert all(d["theta"] == 0.0 for d in rc.deltas if "theta" in d)


def test_systematic_offsets_land_on_named_gates():
    model = ErrorModel(systematic_theta={B23: 0.02}, systematic_phi={B12: -0.01, PD: [0.0, 0.1, 0.2]})
    rc = perturb(PLAN, model, seed=0)
    g = rc.plan.gates
    assert g[B23].theta == pytest.approx(PLAN.gates[B23].theta + 0.02)
    assert g[B12].phi == pytest.approx(PLAN.gates[B12].phi - 0.01)
    np.testing.assert_allclose(np.subtract(g[PD].phases, PLAN.gates[PD].phases), [0.0, 0.1, 0.2])
    assert rc.deltas[B23] == {"gate": B23, "theta": 0.02, "phi": 0.0}


def test_scalar_phase_offset_applies_to_every_mode():
    rc = perturb(PLAN, ErrorModel(systematic_phi={PD: 0.05}), seed=0)
    np.testing.assert_allclose(np.subtract(rc.plan.gates[PD].phases, PLAN.gates[PD].phases), 0.05)


@pytest.mark.parametrize("model", [
    ErrorModel(systematic_theta={PD: 0.1}),
    ErrorModel(systematic_phi={B12: [0.1, 0.2, 0.3]}),
    ErrorModel(systematic_theta={9: 0.1}),
    ErrorModel(component_transmission={7: 0.9}),
])
def test_invalid_offsets_rejected(model):
    with pytest.raises(InvalidArgumentError):
        perturb(PLAN, model, seed=0)


@pytest.mark.parametrize("kwargs", [
    {"jitter_sigma_theta": -0.1}, {"transmission": 1.5}, {"detector_efficiency": [0.5, 2.0]},
    {"herald_efficiency": -0.1}, {"jitter_sigma_phi": float("nan")},
])
def test_error_model_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        ErrorModel(**kwargs)


def test_jitter_is_seeded_and_per_copy():
    model = ErrorModel(jitter_sigma_theta=0.01, jitter_sigma_phi=0.01)
    a = perturb(PLAN, model, seed=5, copy=0)
    assert perturb(PLAN, model, seed=5, copy=0).plan == a.plan
    assert perturb(PLAN, model, seed=5, copy=1).plan != a.plan
    assert perturb(PLAN, model, seed=6, copy=0).plan != a.plan


def test_jitter_is_truncated():
    big = CircuitPlan(2, tuple(BeamSplitter(0, 0.0, 0.0) for _ in range(2000)))
    rc = perturb(big, ErrorModel(jitter_sigma_theta=1.0, jitter_sigma_phi=1.0), seed=11)
    th = np.array([g.theta for g in rc.plan.gates])
    assert np.abs(th).max() <= TRUNCATE_SIGMAS
    assert th.std() == pytest.approx(1.0, abs=0.06)


def test_survival_and_detectors():
    model = ErrorModel(transmission=0.9, component_transmission={0: 0.5, 2: 0.8}, detector_efficiency=[1, 0.5, 0.25])
    rc = perturb(PLAN, model, seed=0)
    assert rc.survival == pytest.approx(0.9 * 0.5 * 0.8)
    np.testing.assert_array_equal(rc.detector_efficiency, [1, 0.5, 0.25])
    np.testing.assert_allclose(rc.transfer, math.sqrt(0.36) * rc.unitary)


def test_mmi_phases_inserted_only_when_requested():
    assert len(perturb(PLAN, ErrorModel(), 0).plan) == len(PLAN)
    rc = perturb(PLAN, ErrorModel(mmi_phase_offset=0.01), 0)
    assert len(rc.plan) == len(PLAN) + PLAN.beam_splitters
    assert identity_deviation(rc.unitary @ UX) > 1e-3


def test_exact_mirror_undoes_any_realization():
    model = ErrorModel(systematic_theta={B12: 0.1}, jitter_sigma_theta=0.05, jitter_sigma_phi=0.05)
    rc = perturb(PLAN, model, seed=4)
    assert identity_deviation(chain([rc, mirror_circuit(rc)]).unitary) < 1e-13


def test_independent_mirror_without_jitter_is_exact():
    model = ErrorModel(systematic_theta={B23: 0.03, B12: -0.02})
    fwd = perturb(PLAN, model, seed=0)
    assert identity_deviation(chain([fwd, independent_mirror(PLAN, model, seed=0, copy=1)]).unitary) < 1e-13


def test_independent_mirror_carries_its_own_jitter():
    model = ErrorModel(jitter_sigma_theta=0.01)
    fwd = perturb(PLAN, model, seed=0)
    dev = identity_deviation(chain([fwd, independent_mirror(PLAN, model, seed=0, copy=1)]).unitary)
    assert 1e-4 < dev < 0.2


def test_chain_multiplies_survival_and_orders_devices():
    a = RealizedCircuit(CircuitPlan(2, (BeamSplitter(0, 0.3, 0.0),)), survival=0.5)
    b = RealizedCircuit(CircuitPlan(2, (PhaseDiagonal((0.0, 1.0)),)), survival=0.8)
    c = chain([a, b])
    assert c.survival == pytest.approx(0.4)
    np.testing.assert_allclose(c.unitary, b.unitary @ a.unitary)
    with pytest.raises(InvalidArgumentError):
        chain([])


@pytest.mark.parametrize("kwargs", [
    {"copies": 0}, {"copies": 3, "style": EVEN_SELF_ADJOINT}, {"copies": 2, "style": "zigzag"},
    {"copies": 1, "style": EXPLICIT, "order": (("U", 0),)},
    {"copies": 1, "style": EXPLICIT, "order": (("U", 0), ("U", 0))},
])
def test_arrangement_spec_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        ArrangementSpec(**kwargs)


def _distinct_copies(k, seed=0):
    model = ErrorModel(jitter_sigma_theta=0.05, jitter_sigma_phi=0.05)
    return [perturb(PLAN, model, seed, copy=c) for c in range(k)]


@pytest.mark.parametrize("style", [MIRRORS_AT_BACK, ALTERNATING])
def test_mirror_styles_telescope_to_identity(style):
    copies = _distinct_copies(3)
    rc = compose_arrangement(copies, ArrangementSpec(3, style))
    assert identity_deviation(rc.unitary) < 1e-12


def test_explicit_order_matches_hand_product():
    u0, u1 = _distinct_copies(2)
    m0, m1 = (mirror_circuit(c) for c in (u0, u1))
    spec = ArrangementSpec(2, EXPLICIT, order=(("U", 0), ("U", 1), ("M", 0), ("M", 1)))
    rc = compose_arrangement([u0, u1], spec)
    expected = u0.unitary @ u1.unitary @ m0.unitary @ m1.unitary
    np.testing.assert_allclose(rc.unitary, expected, atol=1e-13)


def test_even_self_adjoint_is_power():
    (u,) = _distinct_copies(1)
    rc = compose_arrangement([u] * 4, ArrangementSpec(4, EVEN_SELF_ADJOINT))
    np.testing.assert_allclose(rc.unitary, np.linalg.matrix_power(u.unitary, 4), atol=1e-13)


def test_compose_checks_copy_count():
    with pytest.raises(InvalidArgumentError):
        compose_arrangement(_distinct_copies(2), ArrangementSpec(3))


def test_ideal_even_self_adjoint_is_identity():
    for k in (2, 4, 8):
        rc = build_arrangement(PLAN, ErrorModel(), ArrangementSpec(k, EVEN_SELF_ADJOINT), seed=0)
        assert identity_deviation(rc.unitary) < 1e-13


def test_shared_offset_amplifies_linearly():
    model = ErrorModel(systematic_theta={B12: 0.01})
    devs = [identity_deviation(build_arrangement(PLAN, model, ArrangementSpec(k, EVEN_SELF_ADJOINT), 0).unitary)
            for k in (2, 4, 8)]
    assert devs[1] / devs[0] == pytest.approx(2.0, rel=0.01)
    assert devs[2] / devs[0] == pytest.approx(4.0, rel=0.01)


def _first_order(gate, eps=1e-6):
    # identity deviation to first order: || A - (tr A / n) I || for M = I + eps A
    def u_at(d):
        return perturb(PLAN, ErrorModel(systematic_theta={gate: d}), 0).unitary
    du = (u_at(eps) - u_at(-eps)) / (2 * eps)

    def dev(a):
        return np.linalg.norm(a - np.trace(a) / 3 * np.eye(3))
    return dev(UX @ du + du @ UX) / dev(UX.conj().T @ du)


@pytest.mark.parametrize("gate", [B12, BPRIME])
def test_two_copy_ratio_follows_first_order_prediction(gate):
    delta = 1e-4
    model = ErrorModel(systematic_theta={gate: delta})
    fwd = perturb(PLAN, model, 0)
    two = identity_deviation(fwd.unitary @ fwd.unitary)
    vs_nominal_mirror = identity_deviation(UX.conj().T @ fwd.unitary)
    assert two / vs_nominal_mirror == pytest.approx(_first_order(gate), rel=0.1)


def test_b23_offset_is_invisible_to_self_adjoint_arrangements():
    model = ErrorModel(systematic_theta={B23: 0.02})
    fwd = perturb(PLAN, model, 0)
    assert identity_deviation(UX.conj().T @ fwd.unitary) > 1e-2
    for k in (2, 4, 8):
        rc = build_arrangement(PLAN, model, ArrangementSpec(k, EVEN_SELF_ADJOINT), 0)
        assert identity_deviation(rc.unitary) < 1e-12


def test_build_arrangement_mirror_modes():
    model = ErrorModel(systematic_theta={B12: 0.05}, jitter_sigma_theta=1e-3)
    spec = ArrangementSpec(2, MIRRORS_AT_BACK, independent_errors=True)
    exact = build_arrangement(PLAN, model, spec, seed=3, mirror_mode="exact")
    indep = build_arrangement(PLAN, model, spec, seed=3, mirror_mode="independent")
    assert identity_deviation(exact.unitary) < 1e-12
    assert identity_deviation(indep.unitary) > 1e-5
    with pytest.raises(InvalidArgumentError):
        build_arrangement(PLAN, model, spec, seed=3, mirror_mode="mirrored")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 0.3), st.floats(0, 0.3))
def test_realizations_are_unitary(seed, st_, sp):
    rc = perturb(PLAN, ErrorModel(jitter_sigma_theta=st_, jitter_sigma_phi=sp), seed)
    assert np.linalg.norm(rc.unitary.conj().T @ rc.unitary - np.eye(3)) < 1e-13
