"""Command-line front end: ``qrngcert {decompose,certify,generate,calibrate,amplify}``.

Exit codes: 0 pass, 1 certified failure (or unconverged calibration),
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import randomness as rnd
from .calibration import CalibrationProblem, Dataset, Parameter, corrected_plan, fit_systematic
from .circuit import (ErrorModel, RealizedCircuit, build_arrangement,
                      independent_mirror, mirror_circuit, perturb)
from .config import RunConfig, load_config
from .exceptions import ConfigError, DataError, InvalidArgumentError, PreconditionError, QrngCertError
from .matrix import identity_deviation
from .mesh import (CircuitPlan, clements_decompose, dft_matrix, dumps_plan, load_matrix, load_plan,
                   reconstruct, ux_plan)
from .simulator import CountsTable, basis_state, outcome_probs, sample_stream, sample_trials, tally
from .verify import (amplification_scan, detector_coverage_test, dumps_report, inversion_test,
                     report_document, self_adjoint_test, sharpness_test)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

INSUFFICIENT = "insufficient data"
INVOLUTION_TOL = 1e-8

# sub-stream tags so that each stochastic stage of a command draws independent numbers
_TAG_COVERAGE = 1
_TAG_MIRROR_COPY = 1
_TAG_DATASET = 100


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1, dtype=np.uint32)[0])


class Outputs:
    """Collects artifacts and writes them under ``--out`` (or nowhere, for in-process runs)."""

    def __init__(self, out_dir=None):
        self.dir = None if out_dir is None else Path(out_dir)
        self.written: list[str] = []

    def text(self, name: str, content: str) -> None:
        self._write(name, lambda p: p.write_text(content))

    def binary(self, name: str, content: bytes) -> None:
        self._write(name, lambda p: p.write_bytes(content))

    def _write(self, name: str, writer: Callable[[Path], None]) -> None:
        self.written.append(name)
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            writer(self.dir / name)


def _plan(cfg: RunConfig) -> CircuitPlan:
    src = cfg.circuit
    if src.ux is not None:
        return ux_plan(src.ux)
    if src.plan is not None:
        return load_plan(cfg.resolve(src.plan))
    if src.unitary is not None:
        return clements_decompose(load_matrix(cfg.resolve(src.unitary)))
    return clements_decompose(dft_matrix(src.dft))


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("a seed is required for this command (config 'seed' or --seed)")
    return cfg.seed


def _input(cfg: RunConfig, plan: CircuitPlan, mode: int) -> np.ndarray:
    if mode >= plan.n:
        raise ConfigError(f"input mode {mode} does not exist in a {plan.n}-mode circuit")
    return basis_state(plan.n, mode)


def _document(command: str, cfg: RunConfig, body: dict) -> dict:
    return report_document(command, cfg.resolved(), body)


# -- commands -------------------------------------------------------------------

def cmd_decompose(unitary_file, out_dir=None, echo=print) -> tuple[int, dict]:
    """Decompose the matrix in ``unitary_file`` and write ``<stem>.plan.json``."""
    path = Path(unitary_file)
    u = load_matrix(path)
    plan = clements_decompose(u)
    err = float(np.linalg.norm(reconstruct(plan) - u))
    name = path.name.split(".")[0] + ".plan.json"
    target = Path(out_dir) if out_dir is not None else path.parent
    target.mkdir(parents=True, exist_ok=True)
    (target / name).write_text(dumps_plan(plan))
    echo(f"gates: {plan.beam_splitters} beam splitters, {len(plan)} total")
    echo(f"round-trip error: {err:.3e}")
    return EXIT_PASS, {"plan_file": str(target / name), "beam_splitters": plan.beam_splitters,
                       "gates": len(plan), "round_trip_error": err}


def cmd_certify(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Undo test plus sharpness, coverage, self-adjointness and optional amplification."""
    seed = _require_seed(cfg)
    plan = _plan(cfg)
    model = cfg.errors.model()
    t = cfg.thresholds.thresholds()
    psi = _input(cfg, plan, cfg.input_mode)

    fwd = perturb(plan, model, seed, copy=0)
    mirror = (mirror_circuit(fwd) if cfg.mirror == "exact"
              else independent_mirror(plan, model, seed, copy=_TAG_MIRROR_COPY))
    rep = inversion_test(fwd, mirror, psi, cfg.trials, seed, t, statistical=cfg.trials > 0)

    sharp = sharpness_test(fwd, t.sharpness_max)
    rep.sharpness_offdiag_max = sharp.offdiag_max
    rep.add("sharpness", sharp.passed, sharp.offdiag_max, t.sharpness_max, "<=")

    cov = detector_coverage_test(fwd, psi, cfg.coverage_trials, _subseed(seed, _TAG_COVERAGE),
                                 t.coverage_min_clicks, t.coverage_significance)
    rep.coverage_pass = cov.passed
    rep.add("detector_coverage", cov.passed, list(cov.clicks), t.coverage_min_clicks, "all modes interior")
    rep.extra["coverage"] = {"clicks": list(cov.clicks), "intervals": [list(i) for i in cov.intervals]}

    nominal_u = reconstruct(plan)
    run_sa = (cfg.self_adjoint is True
              or (cfg.self_adjoint == "auto" and identity_deviation(nominal_u @ nominal_u) <= INVOLUTION_TOL))
    if run_sa:
        sa = self_adjoint_test(fwd, t.self_adjoint_max)
        rep.add("self_adjoint", sa.passed, sa.deviation, t.self_adjoint_max, "<=")
    else:
        rep.extra["self_adjoint"] = "skipped: nominal device is not an involution"

    if cfg.amplify is not None:
        rows = amplification_scan(plan, model, cfg.amplify.specs(), seed, cfg.mirror, cfg.amplify.repeats)
        rep.extra["amplification"] = [vars(r) for r in rows]
        worst = max(r.identity_deviation for r in rows)
        rep.add("amplified_identity_deviation", worst <= t.identity_max, worst, t.identity_max, "<=")

    out = Outputs(out_dir)
    if rep.counts is not None:
        c = rep.counts
        out.text("certify_counts.csv",
                 CountsTable(c["trials"], c["herald"], tuple(c["modes"]), c["lost"]).to_csv())
    doc = _document("certify", cfg, {"report": rep.to_dict(), "artifacts": out.written + ["certify_report.json"]})
    out.text("certify_report.json", dumps_report(doc))
    return (EXIT_PASS if rep.passed else EXIT_FAIL), doc


def _expected_digits(plan: CircuitPlan, psi: np.ndarray, mapping, base: int) -> np.ndarray:
    p = outcome_probs(RealizedCircuit.ideal(plan), psi).modes
    out = np.zeros(base)
    for mode, prob in enumerate(p):
        digit = mapping.get(mode, None) if mapping is not None else mode
        if digit is None:
            if prob > 0:
                raise ConfigError(f"mode {mode} can click but has no digit in the mapping")
            continue
        out[digit] += prob
    return out / out.sum()


def cmd_generate(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Sample trials, turn clicks into digits and run the frequency and normality tests."""
    seed = _require_seed(cfg)
    g = cfg.generate
    plan = _plan(cfg)
    psi = _input(cfg, plan, cfg.input_mode)
    base = g.base or plan.n
    if base not in (2, 3):
        raise ConfigError(f"a {plan.n}-mode circuit needs generate.base (2 or 3) and a mapping")
    if g.mapping is not None and any(d not in range(base) for d in g.mapping.values()):
        raise ConfigError(f"mapping sends a mode outside base {base}")
    expected = (np.asarray(g.expected, dtype=float) if g.expected is not None
                else _expected_digits(plan, psi, g.mapping, base))

    device = perturb(plan, cfg.errors.model(), seed)
    codes = sample_stream(device, psi, cfg.trials, seed)
    digits = rnd.digits_from_trials(codes, g.mapping, base)
    counts = tally(codes, plan.n)

    body: dict = {"trials": cfg.trials, "digits": len(digits), "base": base,
                  "digit_counts": digits.counts().tolist(), "expected": expected.tolist()}
    failed = False
    if len(digits) == 0:
        body["chi_square"] = {"status": INSUFFICIENT}
    else:
        chi = rnd.chi_square_frequency(digits, expected, g.significance)
        failed |= not chi.passed
        body["chi_square"] = {"status": "pass" if chi.passed else "fail", **chi._asdict(),
                              "significance": g.significance}

    uniform = np.allclose(expected, 1.0 / base, atol=1e-9)
    target = g.borel_on if g.borel_on != "auto" else ("digits" if uniform or base == 2 else "bits")
    seq = digits if target == "digits" or base == 2 else rnd.to_bits(digits, rnd.OUTER)
    try:
        bor = rnd.borel_normality(seq, g.max_block)
    except PreconditionError as exc:
        body["borel"] = {"status": INSUFFICIENT, "on": target, "detail": str(exc)}
    else:
        failed |= not bor.passed
        body["borel"] = {"status": "pass" if bor.passed else "fail", "on": target, "bound": bor.bound,
                         "formula": bor.formula, "n": bor.n, "max_block": bor.max_block,
                         "worst_deviation": {str(m): bor.worst(m) for m in bor.deviations}}

    out = Outputs(out_dir)
    out.text("digits.txt", rnd.dumps_text(digits))
    out.binary("digits.qrd", rnd.pack(digits))
    out.text("generate_counts.csv", counts.to_csv())
    if g.write_bits and base == 3:
        bits = rnd.to_bits(digits, rnd.OUTER)
        out.text("bits.txt", rnd.dumps_text(bits))
    body["passed"] = not failed
    body["artifacts"] = out.written + ["generate_report.json"]
    doc = _document("generate", cfg, body)
    out.text("generate_report.json", dumps_report(doc))
    return (EXIT_FAIL if failed else EXIT_PASS), doc


def _calibration_problem(cfg: RunConfig, plan: CircuitPlan, seed: int) -> tuple[CalibrationProblem, ErrorModel]:
    cal = cfg.calibrate
    truth = (cal.truth or cfg.errors).model()
    datasets = []
    for k, d in enumerate(cal.datasets):
        psi = _input(cfg, plan, d.input_mode)
        spec = d.arrangement.spec() if d.arrangement is not None else None
        if d.counts_csv is not None:
            counts = CountsTable.load(cfg.resolve(d.counts_csv))
        else:
            dseed = _subseed(seed, _TAG_DATASET + k)
            dev = (build_arrangement(plan, truth, spec, dseed) if spec is not None
                   else perturb(plan, truth, dseed))
            counts = sample_trials(dev, psi, d.trials, dseed)
        datasets.append(Dataset(psi, counts, spec))
    params = [Parameter(p.gate, p.angle, p.mode, tuple(p.bounds)) for p in cal.free_parameters]
    model = cfg.errors.model()
    problem = CalibrationProblem(plan, datasets, params, transmission=model.transmission,
                                 detector_efficiency=model.detector_efficiency)
    return problem, truth


def cmd_calibrate(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Fit systematic offsets to count tables; optionally emit a pre-compensated plan."""
    seed = _require_seed(cfg)
    if cfg.calibrate is None:
        raise ConfigError("calibrate command needs a 'calibrate' section")
    plan = _plan(cfg)
    problem, truth = _calibration_problem(cfg, plan, seed)
    result = fit_systematic(problem, seed, cfg.calibrate.n_starts)
    body = {"calibration": result.to_dict(), "starts": result.starts,
            "datasets": [{"trials": ds.counts.trials, "buckets": ds.counts.buckets().tolist()}
                         for ds in problem.datasets]}
    out = Outputs(out_dir)
    if not result.converged:
        body["diagnosis"] = "no start reached a simplex diameter below the convergence limit"
    elif cfg.calibrate.emit_corrected_plan:
        fixed = corrected_plan(plan, result)
        out.text("corrected.plan.json", dumps_plan(fixed))
        if all(ds.counts_csv is None for ds in cfg.calibrate.datasets):
            # closure check against the simulated truth: realized device vs nominal target
            target = reconstruct(plan).conj().T
            before = identity_deviation(target @ perturb(plan, truth.systematic_only(), seed).unitary)
            after = identity_deviation(target @ perturb(fixed, truth.systematic_only(), seed).unitary)
            body["closure"] = {"identity_deviation_uncorrected": before,
                               "identity_deviation_corrected": after}
    body["artifacts"] = out.written + ["calibration_report.json"]
    doc = _document("calibrate", cfg, body)
    out.text("calibration_report.json", dumps_report(doc))
    return (EXIT_PASS if result.converged else EXIT_FAIL), doc


def cmd_amplify(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Identity deviation versus copy count, as a report and a plot-ready CSV."""
    seed = _require_seed(cfg)
    amp = cfg.amplify
    if amp is None:
        raise ConfigError("amplify command needs an 'amplify' section")
    plan = _plan(cfg)
    rows = amplification_scan(plan, cfg.errors.model(), amp.specs(), seed, cfg.mirror, amp.repeats)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["style", "copies", "identity_deviation", "spread", "repeats"])
    for r in rows:
        w.writerow([r.style, r.copies, repr(r.identity_deviation), repr(r.spread), r.repeats])
    out = Outputs(out_dir)
    out.text("amplify.csv", buf.getvalue())
    doc = _document("amplify", cfg, {"rows": [vars(r) for r in rows],
                                     "artifacts": out.written + ["amplify_report.json"]})
    out.text("amplify_report.json", dumps_report(doc))
    return EXIT_PASS, doc


_CONFIG_COMMANDS = {
    "certify": cmd_certify,
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "amplify": cmd_amplify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrngcert", description="Simulate and certify a multiport QRNG.")
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("decompose", help="decompose a unitary (JSON) into a splitter plan")
    d.add_argument("unitary", help="JSON file holding the matrix")
    d.add_argument("--out", help="directory for the plan file (default: next to the input)")
    for name, fn in _CONFIG_COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("--config", required=True, help="run configuration (.json, .yaml, .yml)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", default=".", help="output directory (default: current directory)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        if args.command == "decompose":
            code, _ = cmd_decompose(args.unitary, args.out)
            return code
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = cfg.model_copy(update={"seed": args.seed})
        code, doc = _CONFIG_COMMANDS[args.command](cfg, args.out)
    except (PreconditionError, ConfigError, InvalidArgumentError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QrngCertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    verdict = "PASS" if code == EXIT_PASS else "FAIL"
    print(f"{args.command}: {verdict} (reports in {args.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
