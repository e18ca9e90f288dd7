"""``mwmpc`` command line: simulate, sweep-m, certify, oracle-test.

Exit codes: 0 success, 1 configuration error, 2 a certificate (or oracle
comparison) failed.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .certificates import (CertifyReport, CertifyRun, check_clf, check_descent,
                           check_lemma1, check_reachability, check_telescoping, estimate_eta)
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .dynamics import SystemModel
from .mpc_loop import STOP_LEVEL, MpcConfig, SimulationRecord, run_closed_loop
from .solver import SolverConfig, grid_oracle, solve
from .weighting import ProofConstants, WeightSpec, proof_constants

log = logging.getLogger("mwmpc")

EXIT_OK, EXIT_CONFIG, EXIT_CERT = 0, 1, 2


def fmt(v) -> str:
    """CSV cell: shortest round-trip float text, empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# shared setup

def resolve_constants(cfg: ExperimentConfig, model: SystemModel) -> tuple[int, float, ProofConstants]:
    horizon = cfg.resolved_horizon(model)
    gamma = cfg.certificates.gamma or float(model.metadata["gamma"])
    rho_bar = cfg.certificates.rho_bar or float(model.metadata["rho_bar"])
    eta = estimate_eta(model, horizon, cfg.certificates.eta_state_samples,
                       cfg.certificates.eta_profile_samples, cfg.seed)
    pc = proof_constants(WeightSpec(horizon), eta, gamma, rho_bar)
    m = pc.m_min if cfg.exponent == "auto" else int(cfg.exponent)
    return horizon, eta, proof_constants(WeightSpec(horizon, m), eta, gamma, rho_bar)


def mpc_config(cfg: ExperimentConfig, horizon: int, m: int) -> MpcConfig:
    return MpcConfig(weight_spec=WeightSpec(horizon, m), solver=cfg.solver, steps=cfg.steps,
                     stop_level=cfg.stop_level, warm_start=cfg.warm_start)


def step_rows(model: SystemModel, record: SimulationRecord):
    for s in record.steps:
        yield (s.k, *s.state, *s.applied_control, s.stage_cost, s.optimal_cost,
               s.terminal_stage_cost, s.candidate_cost)
    k = len(record.steps)
    final = record.final_state
    yield (k, *final, *([None] * model.control_dim),
           float(model.stage_cost(np.asarray(final))), record.final_optimal_cost, None, None)


def step_header(model: SystemModel) -> list[str]:
    return (["k"] + [f"x{i + 1}" for i in range(model.state_dim)]
            + [f"u{i + 1}" for i in range(model.control_dim)]
            + ["stage_cost", "optimal_cost", "terminal_stage_cost", "candidate_cost"])


def _out_name(prefix: str, tag: str, index: int, suffix: str) -> str:
    return f"{prefix}_{tag}{'' if index == 0 else f'_{index}'}.{suffix}"


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    horizon, _, pc = resolve_constants(cfg, model)
    m = pc.exponent
    for i, x0 in enumerate(cfg.resolved_initial_states(model)):
        record = run_closed_loop(model, mpc_config(cfg, horizon, m), x0)
        write_csv(out / _out_name("steps", cfg.tag, i, "csv"), step_header(model),
                  step_rows(model, record))
        log.info("x0=%s: %s after %d steps", x0, record.termination, len(record.steps))
    return EXIT_OK


def _sweep_one(args):
    cfg, horizon, m, x0 = args
    model = cfg.build_model()
    record = run_closed_loop(model, mpc_config(cfg, horizon, m), x0)
    final_cost = float(model.stage_cost(np.asarray(record.final_state)))
    reached = record.termination == STOP_LEVEL
    return m, reached, (len(record.steps) if reached else None), final_cost


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    horizon, eta, _ = resolve_constants(cfg, model)
    x0 = cfg.resolved_initial_states(model)[0]
    ms = list(range(cfg.m_range[0], cfg.m_range[1] + 1))
    lemma = check_lemma1(model, x0, horizon, ms, eta, cfg.solver,
                         cfg.certificates.reachability_tolerance)
    by_m = {e.m: e for e in lemma.entries}
    jobs = [(cfg, horizon, m, x0) for m in ms]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = []
    for m, reached, n_steps, final_cost in results:
        e = by_m.get(m)
        rows.append((m, reached, n_steps, final_cost,
                     e.bound if e else None, e.measured if e else None))
    write_csv(out / f"sweep_{cfg.tag}.csv",
              ["m", "converged", "steps_to_stop_level", "final_stage_cost",
               "lemma1_bound", "lemma1_measured"], rows)
    return EXIT_OK


def run_certify(cfg: ExperimentConfig) -> CertifyReport:
    model = cfg.build_model()
    cs = cfg.certificates
    horizon, eta, pc = resolve_constants(cfg, model)
    m = pc.exponent
    clf = None
    if cs.clf:
        clf = check_clf(model, pc.rho_bar, pc.gamma, cs.clf_samples, cfg.seed)
    runs = []
    lemma_ms = range(cs.lemma1_m[0], cs.lemma1_m[1] + 1)
    for x0 in cfg.resolved_initial_states(model):
        reach = check_reachability(model, horizon, x0, cs.reachability_tolerance, cfg.solver)
        lemma = check_lemma1(model, x0, horizon, lemma_ms, eta, cfg.solver,
                             cs.reachability_tolerance)
        record = run_closed_loop(model, mpc_config(cfg, horizon, m), x0)
        runs.append(CertifyRun(
            initial_state=tuple(float(v) for v in x0), reachability=reach, lemma1=lemma,
            descent=check_descent(model, record, pc), telescoping=check_telescoping(record),
            termination=record.termination))
    constants = asdict(pc)
    passed = (clf is None or clf.passed) and all(r.passed for r in runs)
    return CertifyReport(config=cfg.echo(), system=model.name, horizon=horizon, exponent=m,
                         eta_estimate=eta, eta_state_samples=cs.eta_state_samples,
                         eta_profile_samples=cs.eta_profile_samples, constants=constants,
                         clf=clf, runs=tuple(runs), passed=passed)


def cmd_certify(cfg: ExperimentConfig, out: Path) -> int:
    report = run_certify(cfg)
    write_json(out / f"certify_{cfg.tag}.json", report.to_dict())
    if not report.passed:
        log.warning("certificate failure; see certify_%s.json", cfg.tag)
        return EXIT_CERT
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    oc = cfg.oracle
    grid_solver = SolverConfig(max_iterations=0, seed=cfg.seed)
    rows, ok = [], True
    for x0 in cfg.resolved_initial_states(model):
        for m in oc.exponents:
            spec = WeightSpec(oc.horizon, m)
            oracle = grid_oracle(model, spec, x0, list(oc.levels))
            cont = solve(model, spec, x0, cfg.solver)
            grid = _grid_profiles(model, oc.horizon, oc.levels)
            restricted = solve(model, spec, x0, grid_solver, starts=grid)
            dominance = cont.cost <= oracle.cost + 1e-12
            match = (np.array_equal(restricted.profile, oracle.profile)
                     and restricted.cost == oracle.cost)
            ok = ok and dominance and match
            rows.append((*x0, m, oracle.cost, cont.cost, dominance, match))
    header = ([f"x{i + 1}" for i in range(model.state_dim)]
              + ["m", "oracle_cost", "solve_cost", "dominance_ok", "restricted_match"])
    write_csv(out / f"oracle_{cfg.tag}.csv", header, rows)
    return EXIT_OK if ok else EXIT_CERT


def _grid_profiles(model: SystemModel, horizon: int, levels) -> np.ndarray:
    lv = sorted(float(v) for v in levels)
    combos = np.array(list(itertools.product(lv, repeat=horizon * model.control_dim)))
    return combos.reshape(len(combos), horizon, model.control_dim)


COMMANDS = {"simulate": cmd_simulate, "sweep-m": cmd_sweep, "certify": cmd_certify,
            "oracle-test": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mwmpc", description=(
        "MPC with monotonically increasing stage-cost weights (i/N)^m and "
        "numerical stability certificates."))
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, output_dir=args.out)
    except ConfigError as exc:
        print(f"mwmpc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"mwmpc: cannot create output directory {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](cfg, out)


if __name__ == "__main__":
    sys.exit(main())
