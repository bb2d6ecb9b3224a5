import json
import math

import numpy as np
import pytest

from qrngcert.circuit import (ALTERNATING, EVEN_SELF_ADJOINT, ArrangementSpec, ErrorModel, RealizedCircuit, chain,
                              independent_mirror, mirror_circuit, perturb)
from qrngcert.exceptions import ConfigError, InvalidArgumentError
from qrngcert.mesh import clements_decompose, dft_matrix, ux_plan
from qrngcert.simulator import basis_state
from qrngcert.verify import (SCHEMA_VERSION, CertificationReport, Thresholds, _leak_pvalue,
                             amplification_scan, detector_coverage_test, dumps_report, inversion_test,
                             report_document, self_adjoint_test, sharpness_test)

PLAN = ux_plan()
IDEAL = RealizedCircuit.ideal(PLAN)
E1, E2 = basis_state(3, 0), basis_state(3, 1)


def test_ideal_undo_test_passes_tightly():
    rep = inversion_test(IDEAL, mirror_circuit(IDEAL), E1, 10_000, seed=0)
    assert rep.passed
    assert rep.identity_deviation <= 1e-10
    assert rep.recovery_fidelity >= 1 - 1e-10
    assert rep.visibility_raw >= 1 - 1e-10
    assert rep.counts["off_mode_clicks"] == 0


def test_large_independent_jitter_fails():
    model = ErrorModel(jitter_sigma_theta=0.2, jitter_sigma_phi=0.2)
    fwd = perturb(PLAN, model, 1)
    rep = inversion_test(fwd, independent_mirror(PLAN, model, 1, copy=1), E1, 10_000, seed=1)
    assert not rep.passed
    assert not rep.verdicts["identity_deviation"].passed
    assert rep.diagnosis is not None


def test_loss_lowers_visibility_but_not_fidelity():
    rc = perturb(PLAN, ErrorModel(transmission=0.81), 0)
    rep = inversion_test(rc, mirror_circuit(rc), E1, 1000, seed=0)
    assert rep.recovery_fidelity == pytest.approx(1.0)
    # two passes survive with 0.81^2, so the amplitude overlap is 0.81
    assert rep.visibility_raw == pytest.approx(0.81, rel=1e-12)
    assert not rep.verdicts["visibility_raw"].passed


def test_leak_pvalue_matches_binomial_tail():
    n, p, k = 2000, 1e-3, 6
    tail = sum(math.comb(n, j) * p ** j * (1 - p) ** (n - j) for j in range(k, 80))
    assert _leak_pvalue(k, n, p) == pytest.approx(tail, rel=1e-9)
    assert _leak_pvalue(0, n, p) == 1.0


def test_statistical_check_preconditions():
    m = mirror_circuit(IDEAL)
    with pytest.raises(ConfigError):
        inversion_test(IDEAL, m, E1, 0, seed=0)
    with pytest.raises(InvalidArgumentError):
        inversion_test(IDEAL, m, np.array([1, 1, 0]) / math.sqrt(2), 100, seed=0)
    rep = inversion_test(IDEAL, m, np.array([1, 1, 0]) / math.sqrt(2), 0, seed=0, statistical=False)
    assert rep.passed and "recovery_statistics" not in rep.verdicts
    two = RealizedCircuit.ideal(clements_decompose(dft_matrix(2)))
    with pytest.raises(InvalidArgumentError):
        inversion_test(IDEAL, two, E1, 10, seed=0)


def test_report_serializes_to_json():
    rep = inversion_test(IDEAL, mirror_circuit(IDEAL), E1, 100, seed=0)
    d = rep.to_dict()
    assert d["schema_version"] == SCHEMA_VERSION and d["passed"] is True
    assert json.loads(json.dumps(d)) == d
    empty = CertificationReport().to_dict()
    assert empty["identity_deviation"] is None and empty["passed"] is False


def test_report_document_is_deterministic():
    body = {"b": np.float64(1.5), "a": np.arange(3), "c": math.inf}
    doc = report_document("certify", {"seed": 1}, body)
    assert doc["c"] == "inf" and doc["a"] == [0, 1, 2]
    assert dumps_report(doc) == dumps_report(report_document("certify", {"seed": 1}, body))
    assert "time" not in dumps_report(doc)


def test_sharpness():
    assert sharpness_test(IDEAL).passed
    m = np.array([[1.0, 0.1], [0.0, 1.0]])
    res = sharpness_test(m)
    # Gram matrix off-diagonal of [[1, .1], [0, 1]] is 0.1
    assert res.offdiag_max == pytest.approx(0.1)
    assert not res.passed


def test_coverage_passes_for_first_mode_and_fails_for_middle():
    assert detector_coverage_test(IDEAL, E1, 10_000, seed=0).passed
    res = detector_coverage_test(IDEAL, E2, 10_000, seed=0)
    assert not res.passed
    assert res.fired == (True, False, True)
    assert res.intervals[1][0] == 0.0


def test_coverage_requires_enough_clicks():
    res = detector_coverage_test(IDEAL, E1, 12, seed=0)
    assert not res.passed
    with pytest.raises(InvalidArgumentError):
        detector_coverage_test(IDEAL, E1, 0, seed=0)


def test_coverage_fails_when_one_mode_takes_everything():
    res = detector_coverage_test(chain([IDEAL, mirror_circuit(IDEAL)]), E1, 1000, seed=0)
    assert not res.passed and res.clicks == (1000, 0, 0)


def test_self_adjoint():
    res = self_adjoint_test(IDEAL)
    assert res.passed and res.deviation <= 1e-10
    assert not self_adjoint_test(RealizedCircuit.ideal(clements_decompose(dft_matrix(3)))).passed


def test_amplification_scan_rows():
    model = ErrorModel(systematic_theta={0: 0.01})
    specs = [ArrangementSpec(k, EVEN_SELF_ADJOINT) for k in (8, 2, 4)]
    rows = amplification_scan(PLAN, model, specs, seed=0)
    assert [r.copies for r in rows] == [2, 4, 8]
    assert rows[2].identity_deviation / rows[0].identity_deviation == pytest.approx(4, rel=0.15)
    assert all(r.spread == 0.0 for r in rows)


def test_amplification_scan_repeats_with_jitter():
    model = ErrorModel(jitter_sigma_theta=0.01)
    rows = amplification_scan(PLAN, model, [ArrangementSpec(2, ALTERNATING, independent_errors=True)],
                              seed=3, mirror_mode="independent", repeats=5)
    assert rows[0].repeats == 5 and rows[0].spread > 0
    with pytest.raises(InvalidArgumentError):
        amplification_scan(PLAN, model, [], seed=0, repeats=0)


def test_thresholds_defaults():
    t = Thresholds()
    assert (t.identity_max, t.fidelity_min, t.sharpness_max) == (1e-3, 0.999, 1e-6)
