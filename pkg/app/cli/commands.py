"""Command-line surface: parser, run-config merging and subcommand dispatch.

Exit codes: 0 success, 1 configuration or capacity error, 2 numerical failure (including a
failed `verify` suite). Results go to stdout or --out; logs and diagnostics go to stderr.
"""
import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.cli.models import ResultRecord, RunConfig
from app.core import cell, corrector, fpp, varform
from app.core.errors import ConfigError, FppError
from app.core.medium import Environment, MediumSpec
from app.core.verify import SUITES, verify
from app.observability.logger import logger, set_level
from app.storage.results import ResultStore

CSV_HELP = """CSV columns (JSON is canonical, CSV is a projection):
  timeconstant  direction, n, replica, T, m_hat, stderr
  medium        x, direction, weight
  other         one row of flattened outputs, columns sorted

Negative vectors need the = form, e.g. --p=-1,1"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def parse_vector(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file; flags override its values")
    common.add_argument("--medium", help="MediumSpec JSON file")
    common.add_argument("--seed", type=int, help="overrides the medium seed")
    common.add_argument("--out", help="output file (bare names go to FPP_RESULTS_PATH)")
    common.add_argument("--format", choices=["json", "csv"])
    common.add_argument("--timing", action="store_true", default=None,
                        help="record wall-clock seconds (breaks byte reproducibility)")
    common.add_argument("--verbose", action="store_true", help="INFO logs on stderr")

    parser = _Parser(prog="fpphom", description="First-passage percolation homogenization toolkit",
                     epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fpphom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("medium", parents=[common], help="describe a medium and dump a window")
    p.add_argument("--window", type=int, help="ℓ¹ radius of the dumped window")

    p = sub.add_parser("timeconstant", parents=[common], help="estimate m(x)")
    p.add_argument("--x", type=parse_vector, help="direction (default: the direction grid)")
    p.add_argument("--n", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--radius", type=int, help="box radius override")

    p = sub.add_parser("mu", parents=[common], help="finite-horizon value μ(x,t)")
    p.add_argument("--p", type=parse_vector)
    p.add_argument("--x", type=parse_vector)
    p.add_argument("--t", type=float)
    p.add_argument("--phi", choices=["zero", "clamp", "piecewise"])
    p.add_argument("--K", type=float, help="truncation radius (μ_K)")

    p = sub.add_parser("nu", parents=[common], help="discounted stationary value ν_ε")
    p.add_argument("--p", type=parse_vector)
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--interior", type=int)

    p = sub.add_parser("hbar", parents=[common], help="estimate H̄(p)")
    p.add_argument("--method", choices=["mu", "nu", "dual"])
    p.add_argument("--p", type=parse_vector)
    p.add_argument("--t", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--replicas", type=int)

    p = sub.add_parser("corrector", parents=[common], help="descent iteration on an atomic space")
    p.add_argument("--space", help="atomic space JSON file")
    p.add_argument("--p", type=parse_vector)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--f0", type=parse_vector)
    p.add_argument("--trace", action="store_true", default=None)

    p = sub.add_parser("verify", parents=[common], help="run a property suite")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--count", type=int)
    p.add_argument("--samples", type=int)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    document: Dict = {}
    if args.config:
        try:
            document = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    overrides = {k: v for k, v in vars(args).items() if v is not None and k in RunConfig.model_fields}
    try:
        return RunConfig.model_validate({**document, **overrides})
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def load_environment(cfg: RunConfig, required: bool = True) -> Optional[Environment]:
    if cfg.medium is None:
        if required:
            raise ConfigError("a medium is required (--medium or config 'medium')")
        return None
    spec = MediumSpec.load(cfg.medium) if isinstance(cfg.medium, str) else MediumSpec.parse(cfg.medium)
    return Environment(spec, cfg.seed)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _terminal_cost(cfg: RunConfig, env: Environment, p: np.ndarray) -> cell.TerminalCost:
    if cfg.phi == "clamp":
        return cell.TerminalCost.linear_clamp(p, cap=float(np.abs(p).sum()) * 5)
    if cfg.phi == "piecewise":
        return cell.TerminalCost.random_piecewise(env.dimension, 2.0, env.seed)
    return cell.TerminalCost.zero()


CommandResult = Tuple[Dict, Optional[float], Dict, Optional[List[Dict]]]


def cmd_medium(cfg: RunConfig, env: Environment) -> CommandResult:
    rows = env.window_rows(cfg.window)
    outputs = {**env.summary(), "window_radius": cfg.window, "window": rows}
    return outputs, None, {}, [{"x": json.dumps(r["x"]), "direction": r["direction"],
                                "weight": r["weight"]} for r in rows]


def cmd_timeconstant(cfg: RunConfig, env: Environment) -> CommandResult:
    n = _require(cfg.n, "--n")
    directions = cfg.directions or ([cfg.x] if cfg.x else varform.direction_grid(env.dimension))
    estimates = fpp.time_constant_sweep(env, directions, n, cfg.replicas, cfg.radius)
    outputs = {"estimates": [{"direction": list(e.direction), "target": list(e.target),
                              "m_hat": e.estimate, "stderr": e.stderr} for e in estimates]}
    metadata = {"box_radius": estimates[0].box_radius, **estimates[0].metadata}
    rows = [row for e in estimates for row in e.rows()]
    uncertainty = estimates[0].stderr if len(estimates) == 1 else None
    return outputs, uncertainty, metadata, rows


def cmd_mu(cfg: RunConfig, env: Environment) -> CommandResult:
    p = cell.as_momentum(_require(cfg.p, "--p"), env.dimension)
    t = _require(cfg.t, "--t")
    x = tuple(int(v) for v in cfg.x) if cfg.x else tuple([0] * env.dimension)
    phi = _terminal_cost(cfg, env, p)
    if cfg.K is not None:
        result = cell.mu_truncated(env, p, x, t, phi, cfg.K)
    else:
        result = cell.mu(env, p, x, t, phi)
    outputs = {"value": result.value, "argmin": list(result.argmin), "reached": result.reached,
               "phi": phi.label}
    return outputs, None, {"truncation_K": cfg.K}, None


def cmd_nu(cfg: RunConfig, env: Environment) -> CommandResult:
    p = cell.as_momentum(_require(cfg.p, "--p"), env.dimension)
    eps = _require(cfg.eps, "--eps")
    value = cell.nu(env, p, eps, cfg.tol, interior_radius=cfg.interior)
    residual = cell.hjb_residual(value, env, p)
    a, b = env.bounds.a, env.bounds.b
    center = tuple([0] * env.dimension)
    outputs = {
        "value_at_origin": value.at(center),
        "interior": [{"x": list(x), "nu": v} for x, v in value.as_dict().items()],
        "hjb_residual": residual,
        "empirical_C": residual / eps,
        "bounds_violation": value.bounds_violation(a, b),
        "lipschitz_violation": value.lipschitz_violation(a, b),
    }
    metadata = {"box_radius": value.box.radius, "sweeps": value.sweeps, "tol": value.tol}
    return outputs, value.tol, metadata, None


def cmd_hbar(cfg: RunConfig, env: Environment) -> CommandResult:
    p = _require(cfg.p, "--p")
    if cfg.method == "mu":
        estimate = varform.hbar_mu_slope(env, p, _require(cfg.t, "--t"), cfg.replicas)
    elif cfg.method == "nu":
        estimate = varform.hbar_nu_discount(env, p, _require(cfg.eps, "--eps"), cfg.tol)
    else:
        estimate = varform.hbar_dual_norm(env, p, _require(cfg.n, "--n"), cfg.replicas, cfg.directions)
    outputs = {"method": estimate.method, "value": estimate.value, "p": estimate.p}
    return outputs, estimate.uncertainty, estimate.metadata, None


def cmd_corrector(cfg: RunConfig) -> Tuple[CommandResult, corrector.AtomicSpace]:
    source = _require(cfg.space, "--space")
    space = corrector.AtomicSpace.load(source) if isinstance(source, str) else corrector.AtomicSpace.parse(source)
    p = _require(cfg.p, "--p")
    outcome = corrector.run(space, p, cfg.f0, cfg.tol, cfg.max_iter, trace=cfg.trace)
    problem = corrector.CorrectorProblem(space, p, cfg.tol)
    outputs = {**outcome.as_dict(), "minimizers": problem.xstar.tolist(),
               "minimum_values": problem.minval.tolist()}
    metadata = {"tol": problem.tol, "a": space.a, "b": space.b}
    if cfg.trace:
        metadata["trace"] = outcome.trace
    return (outputs, None, metadata, None), space


def dispatch(argv: Optional[List[str]] = None) -> int:
    store = ResultStore()
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            set_level("INFO")
        cfg = load_run_config(args)
        start = time.time()
        logger.info("command_started", command=args.command)

        medium_hash = None
        env = None
        seed = cfg.seed
        exit_code = 0
        if args.command == "corrector":
            (outputs, uncertainty, metadata, rows), space = cmd_corrector(cfg)
            medium_hash = store.compute_hash(space.model_dump(mode="json"))
        elif args.command == "verify":
            env = load_environment(cfg, required=False)
            outputs = verify(args.suite, seed=cfg.seed or 0, count=cfg.count, samples=cfg.samples, env=env)
            uncertainty, metadata, rows = None, {}, None
            if env is not None:
                medium_hash = env.spec.spec_hash()
            exit_code = 0 if outputs["passed"] else 2
        else:
            env = load_environment(cfg)
            handler = {"medium": cmd_medium, "timeconstant": cmd_timeconstant, "mu": cmd_mu,
                       "nu": cmd_nu, "hbar": cmd_hbar}[args.command]
            outputs, uncertainty, metadata, rows = handler(cfg, env)
            medium_hash = env.spec.spec_hash()
            seed = env.seed

        inputs = cfg.model_dump(mode="json", exclude_none=True, exclude={"out", "format", "timing"})
        if args.command not in ("corrector", "verify") or cfg.medium is not None:
            inputs["medium"] = env.spec.canonical() if env is not None else None
        record = ResultRecord(
            command=args.command, version=__version__, seed=seed, medium_hash=medium_hash,
            inputs=inputs, outputs=outputs, uncertainty=uncertainty, metadata=metadata,
            wall_clock_s=round(time.time() - start, 6) if cfg.timing else None,
        )
        store.write(record.model_dump(mode="json", exclude_none=True), rows, cfg.format, cfg.out)
        logger.info("command_completed", command=args.command, exit_code=exit_code)
        if exit_code:
            first = outputs["failures"][0]
            print(f"fpphom: verify {args.suite} failed: {json.dumps(first, default=str)}", file=sys.stderr)
        return exit_code
    except FppError as e:
        logger.error("command_failed", error=str(e), error_type=type(e).__name__)
        print(f"fpphom: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error("command_failed", error=str(e), error_type="ValidationError")
        print(f"fpphom: {e}", file=sys.stderr)
        return 1
