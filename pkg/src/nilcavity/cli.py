"""Command line front end.

Every subcommand reads the same YAML config (``--config``), writes its CSV
and JSON outputs under the resolved output directory and exits with

0  success
2  configuration error or infeasible protocol
3  a validation tolerance was breached
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .config import (
    Config,
    ConfigError,
    KerrStage,
    MeasureStage,
    ProjectStage,
    ScenarioSection,
    SqueezeStage,
    as_complex,
    load_config,
    resolve_out_dir,
)
from .control import (
    InfeasibleProjectionError,
    KerrParams,
    ResonanceCollisionError,
    SqueezeParams,
    displace_then_vacuum,
    ghz_condition,
    kerr_dynamics_params,
    kerr_project,
    measure_photon_number,
    squeeze_then_vacuum,
)
from .coupling import CouplingCoefficients, ScheduleError, SingularScheduleError, integrate_coefficients, solve_schedule
from .nilpotent import NilpotentialError, canonicalize, mask_to_atoms
from .protocols import (
    ProtocolReport,
    dicke_sweep,
    fidelity_to,
    ghz_protocol,
    phase_matched_couplings,
    two_ensemble_protocol,
)
from .state import build_joint_state
from .validation import checks_csv, run_validation, table_csv

EXIT_OK, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 2, 3
SCHEDULE_RESIDUAL_TOL = 1e-8

INFEASIBLE = (
    ConfigError,
    InfeasibleProjectionError,
    ResonanceCollisionError,
    SingularScheduleError,
    ScheduleError,
    NilpotentialError,
    oracle.ImpossibleOutcomeError,
    oracle.CutoffError,
)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _plain(x):
    """JSON-ready copy: complex numbers become ``{"re", "im"}``."""
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.generic):
        return x.item()
    return x


def _json(data) -> str:
    return json.dumps(_plain(data), indent=2, sort_keys=True) + "\n"


def _state_csv(vec: np.ndarray) -> str:
    rows = []
    for mask, a in enumerate(vec):
        if a != 0:
            atoms = " ".join(str(n) for n in mask_to_atoms(mask))
            rows.append([mask, atoms, _fmt(a.real), _fmt(a.imag)])
    return _csv(["mask", "atoms", "re", "im"], rows)


# -- scenario pipeline -----------------------------------------------------------------------


def _field_op(stage, num_atoms: int, linear):
    if stage.op == "displace":
        return oracle.Displace(as_complex(stage.lam))
    if stage.op == "squeeze":
        return oracle.Squeeze(stage.g, stage.t)
    k = _kerr_params(stage, num_atoms)
    return k.operator(_kerr_time(stage, k, linear))


def _kerr_params(stage: KerrStage, num_atoms: int) -> KerrParams:
    return KerrParams(stage.kappa, stage.laser_amplitude, stage.gap or num_atoms, stage.omega_cavity)


def _kerr_time(stage: KerrStage, k: KerrParams, linear) -> float:
    if stage.t is not None:
        return stage.t
    B, C = ghz_condition(linear)
    return kerr_dynamics_params(k, np.conj(C) / np.conj(B))[1]


def _analytic(st, field_stages, term):
    """Closed-form post-selected state when the pipeline matches a primitive, else None."""
    N = st.num_atoms
    if isinstance(term, ProjectStage):
        if field_stages:
            return None
        if term.B is None and term.C is None:
            B, C = ghz_condition(st.coefficients.linear)
        else:
            B, C = as_complex(term.B or 0.0), as_complex(term.C or 0.0)
        return kerr_project(st, B, C, term.gap)
    if not field_stages:
        return measure_photon_number(st, term.photons)
    if len(field_stages) > 1 or term.photons != 0:
        return None
    stage = field_stages[0]
    if stage.op == "displace":
        return displace_then_vacuum(st, as_complex(stage.lam), check_oracle=False)
    if stage.op == "squeeze":
        return squeeze_then_vacuum(st, SqueezeParams(stage.g, stage.t), stage.zeta, check_oracle=False)
    k = _kerr_params(stage, N)
    V = k.coupling()
    t = _kerr_time(stage, k, st.coefficients.linear)
    # two-level rotation: <0|U = cos(Vt) <0| - i sin(Vt) <gap|
    return kerr_project(st, math.cos(V * t), 1j * math.sin(V * t), k.gap)


def run_scenario(sc: ScenarioSection) -> tuple[ProtocolReport, dict[str, str]]:
    """Run a pipeline of field operations ending in a measurement or projection.

    The closed form is used when the pipeline is one of the primitives; the
    dense oracle runs every pipeline when ``check_oracle`` is set, and the two
    are compared.
    """
    coeffs = sc.build_coefficients()
    st = build_joint_state(coeffs)
    N = st.num_atoms
    field_stages, term = sc.pipeline[:-1], sc.pipeline[-1]
    analytic = _analytic(st, field_stages, term)

    stages = [s.model_dump(mode="json", by_alias=True, exclude_none=True) for s in sc.pipeline]
    report = ProtocolReport("scenario", {"N": N, "stages": stages}, float("nan"), None)
    report.details["I"] = [complex(x) for x in coeffs.linear]
    final = None
    if analytic is not None:
        report.details["analytic_primitive"] = analytic.primitive
        report.details["success_probability_analytic"] = analytic.success_probability
        report.success_probability = analytic.success_probability
        final = analytic.vector()

    if sc.check_oracle:
        dense = oracle.DenseState.from_polynomial(st.polynomial, st.polynomial.photon_cap + 1)
        for stage in field_stages:
            tol = 1e-8 if stage.op == "kerr" else 1e-12
            dense = oracle.converged_field_op(_field_op(stage, N, coeffs.linear), dense, tol=tol)
        if isinstance(term, MeasureStage):
            if term.photons >= dense.fock_cutoff:
                dense = dense.with_cutoff(term.photons + 1)
            vec, prob = oracle.project(dense, term.photons)
        else:
            if term.B is None and term.C is None:
                B, C = ghz_condition(coeffs.linear)
            else:
                B, C = as_complex(term.B or 0.0), as_complex(term.C or 0.0)
            gap = term.gap or N
            if gap >= dense.fock_cutoff:
                dense = dense.with_cutoff(gap + 1)
            nrm = math.hypot(abs(B), abs(C))
            row = (np.conj(B) * dense.grid[0] + np.conj(C) * dense.grid[gap]) / nrm
            prob = float(np.vdot(row, row).real / dense.norm**2)
            if prob < 1e-300:
                raise oracle.ImpossibleOutcomeError("projection has zero probability")
            vec = row / np.linalg.norm(row)
        report.oracle["success_probability_oracle"] = prob
        report.oracle["fock_cutoff"] = dense.fock_cutoff
        report.success_probability = prob
        if final is not None:
            report.discrepancy["fidelity_analytic_vs_oracle"] = oracle.fidelity(vec, final)
            report.discrepancy["probability_delta"] = prob - analytic.success_probability
        else:
            final = vec

    if final is None:
        raise ConfigError("pipeline has no closed form; enable check_oracle to run it", "scenario.check_oracle")
    if sc.target is not None:
        report.fidelity = fidelity_to(final, sc.target.build())
        report.parameters["target"] = sc.target.model_dump(mode="json", exclude_none=True)
    return report, {"scenario_report.json": report.to_json() + "\n", "scenario_state.csv": _state_csv(final)}


# -- subcommands -----------------------------------------------------------------------------


def cmd_dicke_sweep(cfg: Config, threads: int):
    sec = cfg.dicke_sweep
    grid = np.linspace(0.0, sec.c_max, sec.grid_points)
    sw = dicke_sweep(sec.N, sec.excitations(), grid, threads=threads)
    files = {"dicke_sweep.csv": sw.to_csv(), "dicke_maxima.csv": sw.maxima_csv()}
    return EXIT_OK, files, f"dicke-sweep: N={sec.N}, {len(sw.Ms)} excitation numbers x {grid.size} grid points"


def _ghz_inputs(cfg: Config):
    sec = cfg.ghz
    N = sec.num_atoms
    if sec.couplings == "phase_matched":
        lin = phase_matched_couplings(N, sec.magnitude)
    elif sec.couplings == "uniform":
        lin = np.full(N, complex(sec.magnitude))
    else:
        if len(sec.couplings) != N:
            raise ConfigError(f"{len(sec.couplings)} couplings for {N} atoms", "ghz.couplings")
        lin = np.array([as_complex(x) for x in sec.couplings])
    coeffs = CouplingCoefficients(lin, None)
    kerr = None
    if sec.dynamic:
        E = float(np.cbrt(sec.kerr_strength / sec.kappa))
        kerr = KerrParams(sec.kappa, E, sec.gap or N, sec.omega_cavity)
    return coeffs, kerr


def cmd_ghz(cfg: Config, threads: int):
    coeffs, kerr = _ghz_inputs(cfg)
    if kerr is not None and kerr.gap != coeffs.num_atoms:
        raise InfeasibleProjectionError(f"Kerr photon gap {kerr.gap} differs from atom number {coeffs.num_atoms}")
    rep = ghz_protocol(coeffs, kerr, cfg.ghz.condition, dynamic=cfg.ghz.dynamic)
    rows = [["symbolic_fidelity", _fmt(rep.fidelity)], ["symbolic_success_probability", _fmt(rep.success_probability)]]
    for key in ("dynamic_fidelity", "dynamic_fidelity_phase_corrected", "dynamic_success_probability", "V_0N", "t_kerr"):
        if key in rep.details:
            rows.append([key, _fmt(rep.details[key])])
    for key in ("relative_error", "max_intermediate_population"):
        if key in rep.oracle:
            rows.append([key, _fmt(rep.oracle[key])])
    files = {"ghz_report.json": rep.to_json() + "\n", "ghz_summary.csv": _csv(["quantity", "value"], rows)}
    return EXIT_OK, files, f"ghz: N={coeffs.num_atoms}, symbolic fidelity {rep.fidelity:.12f}"


def cmd_two_ensemble(cfg: Config, threads: int):
    sec = cfg.two_ensemble
    rep = two_ensemble_protocol(sec.n, as_complex(sec.mu), SqueezeParams(sec.g, sec.t), sec.check_oracle)
    rows = []
    for key, v in sorted(rep.details["beta"].items(), key=lambda kv: tuple(int(x) for x in kv[0].split(","))):
        k, l = key.split(",")
        rows.append([k, l, _fmt(complex(v).real), _fmt(complex(v).imag)])
    files = {
        "two_ensemble_report.json": rep.to_json() + "\n",
        "two_ensemble_beta.csv": _csv(["k", "l", "re", "im"], rows),
    }
    verdict = "entangled" if rep.details["entangled"] else "separable"
    return EXIT_OK, files, f"two-ensemble: n={sec.n}, A|B {verdict}"


def cmd_schedule_solve(cfg: Config, threads: int):
    sec = cfg.schedule_solve
    if sec is None:
        raise ConfigError("missing section", "schedule_solve")
    target = sec.target.build()
    if target.num_atoms != len(sec.omega_atoms):
        raise ConfigError("target and omega_atoms disagree on the atom count", "schedule_solve.target")
    sol = solve_schedule(
        target,
        [w.build() for w in sec.windows],
        sec.omega_cavity,
        sec.omega_atoms,
        None if sec.targets is None else [tuple(k) for k in sec.targets],
        sec.max_condition,
    )
    achieved = integrate_coefficients(sol.schedule)
    summary = {
        "amplitudes": [float(a) for a in sol.amplitudes],
        "condition_number": sol.condition_number,
        "residual": sol.residual,
        "targeted": [list(k) for k in sol.targeted],
    }
    files = {
        "schedule.yaml": sol.schedule.to_yaml(),
        "coefficients.csv": achieved.to_csv(),
        "schedule_solve.json": _json(summary),
    }
    msg = f"schedule-solve: relative residual {sol.residual:.3g}, condition number {sol.condition_number:.3g}"
    if not sol.residual <= SCHEDULE_RESIDUAL_TOL:
        # best-effort schedule is still written, but the target is out of reach
        return EXIT_INFEASIBLE, files, msg + f"; target not reproduced (tolerance {SCHEDULE_RESIDUAL_TOL:g})"
    return EXIT_OK, files, msg


def cmd_canonicalize(cfg: Config, threads: int):
    sec = cfg.canonicalize
    if sec is None:
        raise ConfigError("missing section", "canonicalize")
    form = canonicalize(sec.build(), restarts=sec.restarts, max_sweeps=sec.max_sweeps, seed=cfg.seed)
    summary = {
        "vacuum_amplitude": form.vacuum_amplitude,
        "converged": form.converged,
        "sweeps": form.sweeps,
        "best_restart": form.restarts,
        "local_unitaries": [m for m in form.locals],
    }
    files = {"tanglemeter.txt": form.tanglemeter.to_text() + "\n", "canonical.json": _json(summary)}
    return EXIT_OK, files, f"canonicalize: |vacuum amplitude|^2 = {abs(form.vacuum_amplitude) ** 2:.12f}"


def cmd_validate(cfg: Config, threads: int):
    checks, tables = run_validation(cfg.seed, cfg.validate_.groups)
    files = {"errata.csv": checks_csv(checks)}
    for name, rows in tables.items():
        files[f"{name}.csv"] = table_csv(rows)
    failed = [c.name for c in checks if c.passed is False]
    asserted = sum(c.passed is not None for c in checks)
    msg = f"validate: {asserted - len(failed)}/{asserted} asserted checks pass, {len(checks) - asserted} informational"
    if failed:
        msg += "; failed: " + ", ".join(failed)
    return (EXIT_VALIDATION if failed else EXIT_OK), files, msg


def cmd_run(cfg: Config, threads: int):
    if cfg.scenario is None:
        raise ConfigError("missing section", "scenario")
    rep, files = run_scenario(cfg.scenario)
    return EXIT_OK, files, f"run: success probability {rep.success_probability:.12g}"


COMMANDS = {
    "dicke-sweep": (cmd_dicke_sweep, "Dicke-state success probabilities over a grid of |c|"),
    "ghz": (cmd_ghz, "GHZ state by Kerr projection, symbolic and dynamic"),
    "two-ensemble": (cmd_two_ensemble, "entangle two ensembles by squeezing and vacuum detection"),
    "schedule-solve": (cmd_schedule_solve, "laser amplitudes that realise target coupling coefficients"),
    "canonicalize": (cmd_canonicalize, "canonic state and tanglemeter of an atomic state"),
    "validate": (cmd_validate, "oracle cross-checks; writes the errata report"),
    "run": (cmd_run, "run the scenario pipeline"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--out-dir", help="output directory (overrides the config and the environment)")
    common.add_argument("--seed", type=int, help="seed for randomised components")
    common.add_argument("--threads", type=int, help="worker threads for sweeps")
    common.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    parser = argparse.ArgumentParser(prog="nilcavity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve(args) -> Config:
    cfg = load_config(args.config)
    updates = {"out_dir": resolve_out_dir(cfg, args.out_dir)}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("must be at least 1", "--threads")
        updates["threads"] = args.threads
    return cfg.model_copy(update=updates)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.dump_config:
            sys.stdout.write(cfg.to_yaml())
            return EXIT_OK
        func = COMMANDS[args.command][0]
        code, files, message = func(cfg, cfg.threads)
    except INFEASIBLE as exc:
        print(f"nilcavity {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, newline="\n")
    print(message)
    print(f"wrote {', '.join(sorted(files))} to {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
