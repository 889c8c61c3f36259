"""Command line interface.

Exit codes: 0 certified / passed, 1 usage or input error, 2 inconclusive,
stalled or audit failure.

Defaults can be put in a JSON config file given by ``--config`` or by the
``SLOCCDECOMP_CONFIG`` environment variable; flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .decomposer import (
    Decomposition,
    DecomposerOptions,
    ThresholdScanError,
    run,
    threshold_scan,
    verify_decomposition,
)
from .epsball import CenterInfeasibleError, LPSolverError, cross_polytope_ball, ghz_werner_shift_bound
from .io import (
    FileFormatError,
    atomic_write_text,
    parse_class_spec,
    read_decomposition,
    read_matrix,
    state_digest,
    write_decomposition,
    write_matrix,
)
from .linalg import DensityMatrix, Tolerances
from .states import parse_family

logger = logging.getLogger("sloccdecomp")

CONFIG_ENV = "SLOCCDECOMP_CONFIG"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INCONCLUSIVE = 2


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    max_iters: int = 20000
    eps_cap_factor: float = 1e-2
    overlap_target: str = "sqrt"
    restarts: int = 5
    max_sweeps: int = 20
    rng_seed: int = 0
    eps_min_progress: int = 50
    min_members: int = 0
    log_every: int = 100
    tol_herm: float = 1e-9
    tol_trace: float = 1e-9
    tol_psd: float = 1e-9
    tol_eig: float = 1e-10
    tol_rank: float = 1e-8
    jobs: int = 1

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("tol_") and not getattr(self, f.name) > 0:
                raise UsageError(f"tolerance {f.name} must be positive")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(self.tol_herm, self.tol_trace, self.tol_psd, self.tol_eig, self.tol_rank)

    def decomposer_options(self) -> DecomposerOptions:
        target = self.overlap_target
        if target not in ("sqrt", "rho"):
            target = float(target)
        return DecomposerOptions(max_iters=self.max_iters, eps_cap_factor=self.eps_cap_factor,
                                 overlap_target=target, restarts=self.restarts, max_sweeps=self.max_sweeps,
                                 rng_seed=self.rng_seed, eps_min_progress=self.eps_min_progress,
                                 min_members=self.min_members, log_every=self.log_every,
                                 tol=self.tolerances)


def load_config(path: Optional[str]) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    return data


def build_config(args) -> RunConfig:
    values = load_config(args.config)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def load_state(source: str, tol: Tolerances) -> DensityMatrix:
    """A matrix file path, or a family string such as ``ghz-werner:n=3,p=0.4``."""
    if Path(source).is_file():
        return read_matrix(source, tol)
    if "/" in source or source.endswith(".txt") or source.endswith(".mat"):
        raise FileNotFoundError(f"state file {source} not found")
    return parse_family(source).build()


# -- commands --------------------------------------------------------------------------------


def _emit(text: str, path: Optional[str]):
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_gen_state(args, cfg: RunConfig) -> int:
    rho = parse_family(args.family).build()
    write_matrix(args.out, rho)
    logger.info("wrote %s (%s, purity %.10f)", args.out, rho.structure, float(np.sum(np.abs(rho.matrix) ** 2)))
    return EXIT_OK


def cmd_decompose(args, cfg: RunConfig) -> int:
    tol = cfg.tolerances
    rho = load_state(args.state, tol)
    spec = parse_class_spec(args.class_spec, rho.structure)
    out = run(rho, spec, cfg.decomposer_options())
    if isinstance(out, Decomposition):
        report = verify_decomposition(rho, out)
        lines = [f"certified class={spec.to_text()} members={len(out)} iterations={out.iterations}",
                 "termination " + out.termination.describe()] + report.lines()
        if args.out:
            write_decomposition(args.out, out, rho, cfg.rng_seed, tol, extra={"state_source": args.state})
            lines.append(f"decomposition written to {args.out}")
        _emit("\n".join(lines) + "\n", args.report)
        return EXIT_OK if report.passed else EXIT_INCONCLUSIVE
    w = out.witness
    lines = [f"stalled reason={out.reason} iterations={out.state.k} members={len(out.state.history)}",
             f"message {out.message}",
             f"witness alpha={w.alpha:.17g} tr(rho_k W)={w.value_on_rho:.6e} tr(rho W)={w.value_on_input:.6e}",
             "note the witness uses the best overlap found, a lower bound on the class supremum; "
             "this is not a proof of non-membership"]
    _emit("\n".join(lines) + "\n", args.report)
    return EXIT_INCONCLUSIVE


def cmd_threshold(args, cfg: RunConfig) -> int:
    family = parse_family(args.family)
    if family.parameter is not None:
        raise UsageError("give the family without its parameter, e.g. ghz-werner:n=3")
    spec = parse_class_spec(args.class_spec, family(args.lo).structure)
    try:
        res = threshold_scan(family, spec, args.lo, args.hi, args.tol, cfg.decomposer_options(), cfg.jobs)
    except ThresholdScanError as exc:
        _emit(f"inconclusive {exc}\n", args.out)
        return EXIT_INCONCLUSIVE
    name = family.parameter_name
    lines = [f"{name} certified members iterations"]
    lines += [f"{p:.9g} {int(ok)} {m} {it}" for p, ok, m, it in res.probes]
    lines.append(f"certified {name}={res.certified:.9g} bracket=({res.bracket[0]:.9g}, {res.bracket[1]:.9g}) "
                 f"class={spec.to_text()} family={family.to_text()}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_epsball(args, cfg: RunConfig) -> int:
    dec, header = read_decomposition(args.decomposition)
    if args.state:
        rho = load_state(args.state, cfg.tolerances)
    else:
        mat = dec.reconstruct()
        rho = DensityMatrix((mat + mat.conj().T) / 2, dec.structure)
    try:
        res = cross_polytope_ball(rho, dec, args.tol_f, args.tol_lp, args.rotations, cfg.rng_seed, cfg.jobs)
    except CenterInfeasibleError as exc:
        _emit(f"center infeasible: {exc}\n", args.out)
        return EXIT_INCONCLUSIVE
    except LPSolverError as exc:
        _emit(f"lp solver failure: {exc}\n", args.out)
        return EXIT_INCONCLUSIVE
    lines = [f"f_cp={res.f_cp:.9g} eps_ball={res.eps_ball:.9g} vertex_count={res.vertex_count} "
             f"hull_size={res.hull_size} vertices {'PASS' if res.vertices_ok else 'FAIL'}"]
    if dec.spec.structure.n_parties == 3 and dec.spec.structure.all_qubits:
        lines.append(f"ghz_werner_shift_bound={ghz_werner_shift_bound(res.eps_ball):.9g}")
    lines.append(res.table())
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if res.vertices_ok and res.eps_ball > 0 else EXIT_INCONCLUSIVE


def cmd_verify(args, cfg: RunConfig) -> int:
    dec, header = read_decomposition(args.decomposition)
    rho = load_state(args.state, cfg.tolerances)
    report = verify_decomposition(rho, dec)
    lines = report.lines()
    digest_ok = header.get("state_digest") in (None, state_digest(rho))
    lines.append(f"digest {'PASS' if digest_ok else 'FAIL'}")
    passed = report.passed and digest_ok
    lines.append("audit " + ("PASS" if passed else "FAIL"))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if passed else EXIT_INCONCLUSIVE


# -- parser -------------------------------------------------------------------------------------


def _add_run_flags(p):
    g = p.add_argument_group("run options")
    g.add_argument("--max-iters", dest="max_iters", type=int)
    g.add_argument("--eps-cap", dest="eps_cap_factor", type=float,
                   help="cap on each weight as a fraction of the smallest eigenvalue")
    g.add_argument("--overlap-target", dest="overlap_target", help="'sqrt', 'rho' or a power in (0, 1]")
    g.add_argument("--restarts", type=int)
    g.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    g.add_argument("--eps-min-progress", dest="eps_min_progress", type=int)
    g.add_argument("--min-members", dest="min_members", type=int)
    g.add_argument("--log-every", dest="log_every", type=int)


def _add_common(p):
    p.add_argument("--config", help=f"JSON config file (default from ${CONFIG_ENV})")
    p.add_argument("--rng-seed", dest="rng_seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("-q", "--quiet", action="store_true")
    g = p.add_argument_group("tolerances")
    for name in ("herm", "trace", "psd", "eig", "rank"):
        g.add_argument(f"--tol-{name}", dest=f"tol_{name}", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sloccdecomp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose a state into class members")
    p.add_argument("--state", required=True, help="matrix file or family string")
    p.add_argument("--class", dest="class_spec", required=True)
    p.add_argument("--out", help="decomposition file to write")
    p.add_argument("--report", help="write the report here instead of stdout")
    _add_run_flags(p)
    _add_common(p)

    p = sub.add_parser("threshold", help="bisect for the largest certifiable parameter")
    p.add_argument("--family", required=True, help="family without parameter, e.g. ghz-werner:n=3")
    p.add_argument("--class", dest="class_spec", required=True)
    p.add_argument("--lo", type=float, required=True, help="parameter expected to certify")
    p.add_argument("--hi", type=float, required=True, help="other end of the bracket")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out")
    _add_run_flags(p)
    _add_common(p)

    p = sub.add_parser("epsball", help="cross-polytope ball of a decomposition")
    p.add_argument("decomposition")
    p.add_argument("--state", help="center state (default: the decomposition's reconstruction)")
    p.add_argument("--tol-f", dest="tol_f", type=float, default=1e-6)
    p.add_argument("--tol-lp", dest="tol_lp", type=float, default=1e-9)
    p.add_argument("--rotations", type=int, default=0)
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("verify", help="audit a decomposition file against a state")
    p.add_argument("--state", required=True)
    p.add_argument("decomposition")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("gen-state", help="write a family state as a matrix file")
    p.add_argument("family")
    p.add_argument("out")
    _add_common(p)
    return parser


COMMANDS = {
    "decompose": cmd_decompose,
    "threshold": cmd_threshold,
    "epsball": cmd_epsball,
    "verify": cmd_verify,
    "gen-state": cmd_gen_state,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError, FileFormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
