"""Command line interface: ``lodnewton {convergence,decay,solve} [options]``.

Options may also come from a ``key = value`` file given with ``--config``;
flags on the command line take precedence.  Keys are the long flag names
with or without the leading dashes (``coarse-levels = 2,3,4``).
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, average_eoc, make_problem, run_convergence, run_decay_study, write_rows
from .estimator import LODSolver
from .mesh import write_mesh
from .newton import NewtonConvergenceError, write_history

logger = logging.getLogger("lodnewton")

_ALIASES = {"quad_subdiv": "quad_subdivision", "max_iters": "max_iter"}


def _split(values, cast):
    items = []
    for v in values if isinstance(values, (list, tuple)) else [values]:
        items.extend(s for s in str(v).replace(",", " ").split() if s)
    return tuple(cast(s) for s in items)


def _bool(text):
    text = str(text).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(value):
    return _split(value, int)


def _float_list(value):
    return _split(value, float)


# ExperimentConfig field -> parser for values read from text
_PARSERS = {
    "epsilon": float, "fine_level": int, "coarse_levels": _int_list, "layers": _float_list,
    "fine_layers": _int_list, "layer_multiplier": float, "table_fine_layers": _bool,
    "quad_subdivision": int, "abstol": float, "reltol": float, "max_iter": int, "variant": str,
    "linear": _bool, "coefficient": str, "contrast": float, "n_jobs": int, "decay_level": int,
    "decay_nodes": int, "out": str, "format": str,
}


def _cast_option(key, value):
    if key not in _PARSERS:
        raise ValueError(f"unknown option {key!r}")
    if isinstance(value, (list, tuple)) or isinstance(value, str):
        if isinstance(value, str) and value.strip().lower() == "none":
            return None
        return _PARSERS[key](value)
    return value


def _normalise_key(key):
    key = key.strip().lstrip("-").replace("-", "_")
    return _ALIASES.get(key, key)


def read_config_file(path):
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    options = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        options[_normalise_key(key)] = value.strip()
    return options


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    opt = common.add_argument
    # defaults are None so that only explicit flags override the config file
    opt("--config", help="key = value file with default options")
    opt("--epsilon", type=float, help="oscillation length of the coefficient (default 0.05)")
    opt("--fine-level", type=int, help="fine mesh size h = 2^-LEVEL (default 6)")
    opt("--coarse-levels", nargs="+", metavar="L", help="coarse mesh sizes H = 2^-L (default 2 3 4 5)")
    opt("--layers", nargs="+", metavar="K", help="coarse patch layers per coarse level")
    opt("--fine-layers", nargs="+", metavar="M", help="patch extent in fine element layers per coarse level")
    opt("--layer-multiplier", type=float, help="use layers = m log(1/H) instead of an explicit list")
    opt("--quad-subdiv", dest="quad_subdivision", type=int, help="composite quadrature subdivision (default 4)")
    opt("--abstol", type=float, help="Newton absolute tolerance (default 1e-10)")
    opt("--reltol", type=float, help="Newton relative tolerance (default 0)")
    opt("--max-iter", type=int, help="Newton iteration limit (default 50)")
    opt("--variant", choices=["element", "nodal"], help="corrector localisation (default element)")
    opt("--coefficient", choices=["epsilon", "identity", "contrast"], help="diffusion coefficient")
    opt("--contrast", type=float, help="contrast of the checkerboard coefficient")
    opt("--linear", action="store_const", const=True, help="drop the nonlinear term")
    opt("--n-jobs", type=int, help="threads for corrector solves")
    opt("--out", help="output file (default: standard output)")
    opt("--format", choices=["csv", "json"], help="output format (default csv)")
    opt("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="lodnewton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("convergence", parents=[common], help="error and EOC table against the fine solution")
    decay = sub.add_parser("decay", parents=[common], help="decay profiles of global correctors")
    decay.add_argument("--decay-level", type=int, help="coarse level of the study (default 3)")
    decay.add_argument("--decay-nodes", type=int, help="number of sampled nodes, 0 for all (default 5)")
    solve = sub.add_parser("solve", parents=[common],
                           help="multiscale solution on the first coarse level, as x,y,u at fine vertices")
    solve.add_argument("--history", help="write the Newton history CSV here")
    solve.add_argument("--mesh-out", help="write the fine mesh here")
    return parser


def resolve_config(args):
    """Merge the config file and explicit flags into an :class:`ExperimentConfig`."""
    options = read_config_file(args.config) if args.config else {}
    skip = {"command", "config", "verbose", "history", "mesh_out"}
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            options[key] = value
    options = {k: _cast_option(k, v) for k, v in options.items()}
    if args.command == "decay" and "coarse_levels" not in options:
        # the decay study has its own coarse level
        options["coarse_levels"] = (options.get("decay_level", ExperimentConfig.decay_level),)
        options.setdefault("layers", (1.0,))
    return ExperimentConfig.from_options(options)


def _emit(rows, config):
    write_rows(rows, config.out or sys.stdout, config.format, config)


def _convergence(config, args):
    rows = run_convergence(config)
    _emit(rows, config)
    l2, h1 = average_eoc(rows)
    failed = [r for r in rows if not r.ok]
    summary = f"average EOC: L2 {l2 if l2 is None else round(l2, 3)}, H1 {h1 if h1 is None else round(h1, 3)}"
    print(summary if not failed else f"{summary}; {len(failed)} row(s) failed", file=sys.stderr)
    return 1 if failed else 0


def _decay(config, args):
    rows = run_decay_study(config)
    _emit(rows, config)
    return 0


def _solve(config, args):
    level, k, ell = config.schedule()[0]
    est = LODSolver(coarse_n=2**level, fine_n=2**config.fine_level, layers=k, fine_layers=ell,
                    variant=config.variant, quad_subdivision=config.quad_subdivision,
                    abstol=config.abstol, reltol=config.reltol, max_iter=config.max_iter,
                    n_jobs=config.n_jobs)
    try:
        est.fit(make_problem(config))
        result = est.newton_result_
    except NewtonConvergenceError as exc:
        logger.error("%s", exc)
        if args.history:
            write_history(exc.result, args.history)
        return 1
    if args.history:
        write_history(result, args.history)
    mesh = est.fine_space_.mesh
    if args.mesh_out:
        write_mesh(mesh, args.mesh_out)
    u = est.fine_space_.to_vertices(est.fine_solution_)
    fh = open(config.out, "w", newline="") if config.out else sys.stdout
    try:
        if config.format == "json":
            json.dump({"iterations": result.iterations,
                       "residual_norms": [float(f"{r:.6g}") for r in result.residual_norms],
                       "x": mesh.vertices[:, 0].tolist(), "y": mesh.vertices[:, 1].tolist(),
                       "u": [float(f"{v:.6g}") for v in u]}, fh)
            fh.write("\n")
        else:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "u"])
            for (x, y), v in zip(mesh.vertices, u):
                writer.writerow([f"{x:.6g}", f"{y:.6g}", f"{v:.6g}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"converged in {result.iterations} Newton iterations, "
          f"u in [{np.min(u):.4f}, {np.max(u):.4f}]", file=sys.stderr)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    handler = {"convergence": _convergence, "decay": _decay, "solve": _solve}[args.command]
    return handler(config, args)


if __name__ == "__main__":
    sys.exit(main())
