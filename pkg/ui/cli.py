"""
Command-line entry point.

Every subcommand resolves its parameters (flags > --config file > stored
settings > environment > defaults), writes its outputs atomically into
--out together with a manifest of sha256 digests, and maps failures to
exit codes: 2 invalid input, 3 tolerance breach, 4 anything else.
"""
import argparse
import logging
import math
import os
import re
import sys
from dataclasses import replace
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config import (
    APP_NAME, CONCAVITY_TOL, DEFAULT_OUTPUT_DIR, DEFAULT_SEED, DEFAULT_SNAPSHOTS,
    DUALITY_TOL, TOOL_VERSION, read_config_file, resolve_setting,
)
from core.clusters import branch_partition, optimal_deviation
from core.deviation import ClusteringDeviation
from core.errors import ToleranceBreach, ValidationError
from core.kpz import (
    build_hf, duality_check, hopf_lax_evolve, intermediate_decomposition,
    invert_gradient, i_kpz, shock_fan,
)
from core.rates import lyapunov_exponent, mom_functional, mom_identity_check, rateq_clustering, rateq_optimal
from core.sde import SimConfig, cluster_initial_state, mc_clustering_experiment, simulate
from document.export import (
    RunManifest, export_particles, export_shape_samples, export_shocks, export_trajectory,
)
from document.pdf import save_run_report
from utils.helpers import load_json, parse_float_list, write_json

logger = logging.getLogger(__name__)

# "-1,1" or "-2.5e-3": a value, not an option
NEGATIVE_VALUE = re.compile(r"^-\.?\d[\d.eE+\-,; ]*$")

SUMMARY_NAME = "summary.json"
REPORT_PDF = "report.pdf"


class Param(NamedTuple):
    name: str
    cast: Callable[[Any], Any]
    default: Any = None
    required: bool = False
    help: str = ""


def _floats(name: str) -> Callable[[Any], List[float]]:
    def cast(value):
        if isinstance(value, (list, tuple)):
            return [float(v) for v in value]
        return parse_float_list(value, name)
    return cast


def _scalar(kind: Callable[[Any], Any], name: str) -> Callable[[Any], Any]:
    def cast(value):
        try:
            return kind(value)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"--{name.replace('_', '-')}: {e}") from e
    return cast


PARAMS: Dict[str, Tuple[Param, ...]] = {
    "optimal": (
        Param("x", _floats("x"), required=True, help="start positions, strictly increasing"),
        Param("m", _floats("m"), required=True, help="cluster masses"),
        Param("xi", _scalar(float, "xi"), 0.0, help="terminal point"),
        Param("t", _scalar(float, "t"), required=True, help="horizon"),
        Param("samples", _scalar(int, "samples"), 0, help="uniform trajectory samples (0: knots only)"),
    ),
    "lyapunov": (
        Param("x", _floats("x"), required=True),
        Param("m", _floats("m"), required=True),
        Param("xi", _scalar(float, "xi"), 0.0),
        Param("t", _scalar(float, "t"), required=True),
    ),
    "rate": (
        Param("deviation", str, required=True, help="deviation JSON"),
        Param("start", _scalar(float, "start"), None),
        Param("stop", _scalar(float, "stop"), None),
    ),
    "mom": (
        Param("deviation", str, required=True, help="deviation JSON"),
    ),
    "shape": (
        Param("t", _scalar(float, "t"), required=True),
        Param("x", _floats("x"), required=True),
        Param("h", _floats("h"), None, help="node heights"),
        Param("m", _floats("m"), None, help="slope drops, inverted for h"),
        Param("times", _floats("times"), None, help="times in (0, t] for the evolved shape"),
        Param("sample", _scalar(int, "sample"), 0, help="sample points for shape CSV"),
    ),
    "duality": (
        Param("t", _scalar(float, "t"), required=True),
        Param("x", _floats("x"), required=True),
        Param("m", _floats("m"), required=True),
        Param("tol", _scalar(float, "tol"), DUALITY_TOL),
    ),
    "decompose": (
        Param("t", _scalar(float, "t"), required=True),
        Param("x", _floats("x"), required=True),
        Param("m", _floats("m"), required=True),
        Param("t_mid", _scalar(float, "t_mid"), required=True),
        Param("tol", _scalar(float, "tol"), DUALITY_TOL),
    ),
    "simulate": (
        Param("n", _scalar(int, "n"), required=True, help="particle count N"),
        Param("t_scale", _scalar(float, "t_scale"), 1.0, help="time scale T"),
        Param("dt", _scalar(float, "dt"), None, help="micro step (default 1e-3/N)"),
        Param("seed", _scalar(int, "seed"), DEFAULT_SEED),
        Param("replicas", _scalar(int, "replicas"), 1),
        Param("noise_scale", _scalar(float, "noise_scale"), 1.0),
        Param("x", _floats("x"), [0.0]),
        Param("m", _floats("m"), [1.0]),
        Param("xi", _scalar(float, "xi"), 0.0),
        Param("t", _scalar(float, "t"), 1.0, help="macroscopic horizon"),
        Param("snapshots", _scalar(int, "snapshots"), DEFAULT_SNAPSHOTS),
        Param("workers", _scalar(int, "workers"), None),
    ),
}


def _resolve(command: str, args: argparse.Namespace, file_values: Dict[str, str]) -> Dict[str, Any]:
    values = {}
    for p in PARAMS[command]:
        flag = getattr(args, p.name, None)
        value = resolve_setting(p.name, flag, file_values, None, p.cast)
        if value is None:
            if p.required:
                raise ValidationError(f"--{p.name.replace('_', '-')} is required")
            value = p.default
        elif isinstance(value, str) and flag is not None:
            value = p.cast(value)
        values[p.name] = value
    return values


def _replay_argv(command: str, values: Dict[str, Any]) -> List[str]:
    argv = [command]
    for name, value in values.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        argv += [f"--{name.replace('_', '-')}", str(value)]
    return argv


# --- subcommands: each returns (summary, files written, seeds, breach message) ---

Breach = Optional[Tuple[str, float, float]]
Outcome = Tuple[Dict[str, Any], List[str], List[Any], Breach]


def cmd_optimal(values: Dict[str, Any], out_dir: str) -> Outcome:
    dev, tree = optimal_deviation(values["x"], values["m"], values["xi"], values["t"])
    write_json(os.path.join(out_dir, "deviation.json"), dev.to_json())
    write_json(os.path.join(out_dir, "merge_tree.json"), tree.to_json())
    export_trajectory(os.path.join(out_dir, "trajectory.csv"), dev, values["samples"] or None)
    summary = {
        "rateq": rateq_clustering(dev).total,
        "rateq_closed_form": rateq_optimal(tree, values["m"], values["t"]),
        "L_SHE": mom_functional(dev),
        "merge_times": [e.time for e in tree.events],
        "branches": [list(b) for b in branch_partition(tree, tree.n, tree.horizon)],
    }
    return summary, ["deviation.json", "merge_tree.json", "trajectory.csv"], [], None


def cmd_lyapunov(values: Dict[str, Any], out_dir: str) -> Outcome:
    value = lyapunov_exponent(values["xi"], values["t"], values["x"], values["m"])
    return {"L_SHE": value}, [], [], None


def _load_deviation(path: str) -> ClusteringDeviation:
    return ClusteringDeviation.from_json(load_json(path))


def cmd_rate(values: Dict[str, Any], out_dir: str) -> Outcome:
    dev = _load_deviation(values["deviation"])
    interval = None
    if values["start"] is not None or values["stop"] is not None:
        start = values["start"] if values["start"] is not None else 0.0
        stop = values["stop"] if values["stop"] is not None else dev.horizon
        interval = (start, stop)
    return rateq_clustering(dev, interval).to_json(), [], [], None


def cmd_mom(values: Dict[str, Any], out_dir: str) -> Outcome:
    dev = _load_deviation(values["deviation"])
    lhs, rhs = mom_identity_check(dev)
    summary = {"mom": rhs, "identity": {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}}
    return summary, [], [], None


def cmd_shape(values: Dict[str, Any], out_dir: str) -> Outcome:
    t, x = values["t"], values["x"]
    if (values["h"] is None) == (values["m"] is None):
        raise ValidationError("give exactly one of --h and --m")
    h = values["h"] if values["h"] is not None else invert_gradient(t, x, values["m"]).tolist()
    shape = build_hf(t, x, h)
    files = ["shape.json"]
    write_json(os.path.join(out_dir, "shape.json"), shape.to_json())

    if values["sample"] > 0:
        lo, hi = shape.support()
        pad = 0.25 * max(1.0, hi - lo)
        export_shape_samples(os.path.join(out_dir, "shape_samples.csv"), shape,
                             np.linspace(lo - pad, hi + pad, values["sample"]))
        files.append("shape_samples.csv")

    for k, t_prime in enumerate(values["times"] or []):
        if not 0.0 < t_prime <= t:
            raise ValidationError(f"--times entry {t_prime!r} outside (0, {t!r}]")
        evolved = hopf_lax_evolve(shape, t - t_prime)
        name = f"shape_t{k}.json"
        write_json(os.path.join(out_dir, name), evolved.to_json())
        files.append(name)

    drops = shape.slope_drops
    if np.all(drops > CONCAVITY_TOL):
        export_shocks(os.path.join(out_dir, "shocks.csv"), shock_fan(t, x, h))
        files.append("shocks.csv")
    else:
        logger.warning("h is not strictly inside the concave region; no shocks written")

    summary = {
        "i_kpz": i_kpz(shape),
        "gradient": drops.tolist(),
        "h": [float(v) for v in h],
        "concave": shape.concave,
        "boundary": bool(np.any(np.abs(drops) <= CONCAVITY_TOL)),
    }
    return summary, files, [], None


def cmd_duality(values: Dict[str, Any], out_dir: str) -> Outcome:
    from_clusters, from_legendre = duality_check(values["t"], values["x"], values["m"])
    residual = abs(from_clusters - from_legendre)
    summary = {"L_clusters": from_clusters, "L_legendre": from_legendre, "residual": residual}
    breach = None
    if not residual < values["tol"]:
        breach = (f"duality residual {residual:.3e} not below {values['tol']:.3e}", residual, values["tol"])
    return summary, [], [], breach


def cmd_decompose(values: Dict[str, Any], out_dir: str) -> Outcome:
    report = intermediate_decomposition(values["t"], values["x"], values["m"], values["t_mid"])
    write_json(os.path.join(out_dir, "decomposition.json"), report.to_json())
    summary = {"residual_split": report.residual_split, "residual_gradient": report.residual_gradient}
    worst = max(report.residual_split, report.residual_gradient)
    breach = None
    if not worst < values["tol"]:
        breach = (f"decomposition residual {worst:.3e} not below {values['tol']:.3e}", worst, values["tol"])
    return summary, ["decomposition.json"], [], breach


def cmd_simulate(values: Dict[str, Any], out_dir: str) -> Outcome:
    n, scale = values["n"], values["t_scale"]
    if n < 1:
        raise ValidationError("--n must be >= 1")
    config = SimConfig.for_particles(n, dt=values["dt"], seed=values["seed"],
                                     noise_scale=values["noise_scale"])
    horizon = values["t"]
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValidationError("--t must be positive")
    initial, _ = cluster_initial_state(values["x"], values["m"], n, scale)
    grid = np.linspace(0.0, horizon, max(2, values["snapshots"]))
    trajectory = simulate(initial, replace(config, spawn_key=(0,)), horizon * scale, grid * scale)
    export_particles(os.path.join(out_dir, "particles.csv"), trajectory)

    report = mc_clustering_experiment(values["replicas"], n, scale, values["x"], values["m"],
                                      values["xi"], horizon, config, workers=values["workers"],
                                      snapshots=values["snapshots"])
    write_json(os.path.join(out_dir, "experiment.json"), report.to_json())
    summary = {
        "regime": report.regime,
        "clustering_regime": report.clustering_regime,
        "median_spread": report.median_spread,
        "below_threshold": report.below_threshold,
        "quantiles": report.quantiles,
    }
    seeds = [{"entropy": config.seed, "spawn_key": [0]}] + report.seeds
    return summary, ["particles.csv", "experiment.json"], seeds, None


COMMANDS: Dict[str, Callable[[Dict[str, Any], str], Outcome]] = {
    "optimal": cmd_optimal,
    "lyapunov": cmd_lyapunov,
    "rate": cmd_rate,
    "mom": cmd_mom,
    "shape": cmd_shape,
    "duality": cmd_duality,
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
}

COMMAND_HELP = {
    "optimal": "optimal deviation, merge tree and L_SHE for clusters (x, m)",
    "lyapunov": "L_SHE(xi -> t (x, m))",
    "rate": "rate functional of a deviation JSON",
    "mom": "moment functional and its identity check for a deviation JSON",
    "shape": "terminal shape h_f, I_KPZ, evolved shapes and shocks",
    "duality": "L_SHE from clusters against the Legendre transform of I_KPZ",
    "decompose": "split L_SHE at an intermediate time",
    "simulate": "particle simulation and Monte Carlo clustering report",
}


def run_command(command: str, args: argparse.Namespace) -> int:
    file_values = read_config_file(getattr(args, "config", None))
    values = _resolve(command, args, file_values)
    out_dir = resolve_setting("output_dir", args.out, file_values, DEFAULT_OUTPUT_DIR)
    os.makedirs(out_dir, exist_ok=True)
    logger.info("%s -> %s", command, out_dir)

    summary, files, seeds, breach = COMMANDS[command](values, out_dir)
    write_json(os.path.join(out_dir, SUMMARY_NAME), summary)
    files = files + [SUMMARY_NAME]

    manifest = RunManifest(
        command=command,
        parameters={"argv": _replay_argv(command, values), "values": values},
        seeds=seeds,
    )
    manifest.record(out_dir, files)
    manifest.save(out_dir)

    if getattr(args, "pdf", False):
        save_run_report(os.path.join(out_dir, REPORT_PDF), command, values, summary, files)
    if breach:
        raise ToleranceBreach(*breach)
    return 0


def run_replay(args: argparse.Namespace) -> int:
    manifest = RunManifest.load(args.manifest)
    argv = manifest.parameters.get("argv")
    if not argv:
        raise ValidationError("manifest carries no replayable command line")
    out_dir = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "replay")
    code = main(list(argv) + ["--out", out_dir])
    if code not in (0, 3):
        return code
    bad = manifest.mismatches(out_dir)
    if bad:
        raise ToleranceBreach(f"replay digests differ for {', '.join(bad)}")
    logger.info("replay matched %d files", len(manifest.digests))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME.lower(), description="Sticky-particle large deviations toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="key=value run file")
    common.add_argument("--pdf", action="store_true", help="also render a PDF run report")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    for command, params in PARAMS.items():
        p = sub.add_parser(command, parents=[common], help=COMMAND_HELP[command])
        for param in params:
            p.add_argument(f"--{param.name.replace('_', '-')}", dest=param.name, default=None, help=param.help)
    replay = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare digests")
    replay.add_argument("manifest")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def attach_negative_values(argv: Sequence[str]) -> List[str]:
    """`--x -1,1` -> `--x=-1,1`, so argparse does not read the value as a flag."""
    joined: List[str] = []
    tokens = list(argv)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if (token.startswith("--") and "=" not in token and i + 1 < len(tokens)
                and NEGATIVE_VALUE.match(tokens[i + 1])):
            joined.append(f"{token}={tokens[i + 1]}")
            i += 2
            continue
        joined.append(token)
        i += 1
    return joined


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(attach_negative_values(sys.argv[1:] if argv is None else argv))
    _configure_logging(args)
    try:
        if args.command == "replay":
            return run_replay(args)
        return run_command(args.command, args)
    except ValidationError as e:
        logger.error("invalid input: %s", e)
        return 2
    except ToleranceBreach as e:
        logger.error("tolerance breach: %s", e)
        return 3
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        logger.debug("traceback", exc_info=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
