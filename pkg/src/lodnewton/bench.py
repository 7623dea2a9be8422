"""Convergence and decay studies for the oscillating semi-linear test problem.

The convergence study solves the problem once on the fine mesh and then,
for each coarse mesh size, with the localized multiscale method, and
reports errors against the fine solution together with experimental orders
of convergence.  The decay study records how quickly global correctors
fall off away from their node.
"""

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .estimator import FineScaleSolver, LODSolver
from .fem import FeSpace, assemble_mass, assemble_stiffness, composite_rule, h1_seminorm, l2_norm
from .clement import build_clement
from .lod import VARIANTS, LocalizationContext, compute_correctors, decay_profile, fit_decay
from .mesh import build_unit_square_mesh
from .problems import contrast_coefficient, identity_coefficient, test_problem

logger = logging.getLogger(__name__)

__all__ = [
    "TABLE_SCHEDULE",
    "ExperimentConfig",
    "ConvergenceRow",
    "make_problem",
    "run_convergence",
    "average_eoc",
    "run_decay_study",
    "write_rows",
    "format_float",
]

# coarse level -> (coarse layers, fine layers) of the reference experiment at h = 2**-6
TABLE_SCHEDULE = {2: (1.5, 24), 3: (2.0, 16), 4: (2.5, 12), 5: (3.0, 8)}
TABLE_FINE_LEVEL = 6
COEFFICIENTS = ("epsilon", "identity", "contrast")
EXPECTED_RANGE = (-1.75, 0.0)


def format_float(x):
    """Six significant digits; ``None`` and NaN become an empty field."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6g}"


def _round(x):
    text = format_float(x)
    return float(text) if text else None


@dataclass
class ExperimentConfig:
    """Parameters of a study.

    Mesh sizes are given as levels: ``fine_level=6`` means ``h = 2**-6``.

    ``layers`` lists the coarse patch layers per coarse level.  Left as
    ``None`` it is taken from :data:`TABLE_SCHEDULE`, or computed as
    ``m * log(1/H)`` rounded to a multiple of 1/2 when ``layer_multiplier=m``
    is set.  ``fine_layers`` fixes the patch extent in fine element layers
    per row.  Left as ``None``, rows that match the reference schedule use
    its fine layer count (if ``table_fine_layers``) and all others use
    ``layers * H/h``.
    """

    epsilon: float = 0.05
    fine_level: int = 6
    coarse_levels: tuple = (2, 3, 4, 5)
    layers: tuple | None = None
    fine_layers: tuple | None = None
    layer_multiplier: float | None = None
    table_fine_layers: bool = True
    quad_subdivision: int = 4
    abstol: float = 1e-10
    reltol: float = 0.0
    max_iter: int = 50
    variant: str = "element"
    linear: bool = False
    coefficient: str = "epsilon"
    contrast: float = 100.0
    n_jobs: int = 1
    decay_level: int = 3
    decay_nodes: int = 5
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        self.coarse_levels = tuple(int(c) for c in self.coarse_levels)
        if self.layers is not None:
            self.layers = tuple(float(k) for k in self.layers)
        if self.fine_layers is not None:
            self.fine_layers = tuple(int(m) for m in self.fine_layers)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.coarse_levels:
            raise ValueError("at least one coarse level is required")
        if min(self.coarse_levels) < 1:
            raise ValueError("coarse levels must be >= 1")
        if self.fine_level <= max(self.coarse_levels):
            raise ValueError("the fine level must be strictly finer than every coarse level")
        if self.layer_multiplier is not None and not self.layer_multiplier > 0:
            raise ValueError("layer_multiplier must be positive")
        if self.layers is None and self.layer_multiplier is None:
            missing = [c for c in self.coarse_levels if c not in TABLE_SCHEDULE]
            if missing:
                raise ValueError(f"no default layer count for coarse level(s) {missing}; "
                                 "give layers or layer_multiplier")
        if self.layers is not None:
            if len(self.layers) != len(self.coarse_levels):
                raise ValueError("need one layer count per coarse level")
            if any(k < 1 or 2 * k != int(2 * k) for k in self.layers):
                raise ValueError("layers must be multiples of 0.5 and at least 1")
        if self.fine_layers is not None and len(self.fine_layers) != len(self.coarse_levels):
            raise ValueError("need one fine layer count per coarse level")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.coefficient not in COEFFICIENTS:
            raise ValueError(f"coefficient must be one of {COEFFICIENTS}")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    @classmethod
    def from_options(cls, options):
        """Build from a partial mapping of option values, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = set(options) - known
        if unknown:
            raise ValueError(f"unknown option(s): {', '.join(sorted(unknown))}")
        return cls(**options)

    def schedule(self):
        """``(level, coarse_layers, fine_layers or None)`` for every coarse level."""
        out = []
        for i, level in enumerate(self.coarse_levels):
            if self.layers is not None:
                k = self.layers[i]
            elif self.layer_multiplier is not None:
                k = max(1.0, round(2.0 * self.layer_multiplier * level * math.log(2.0)) / 2.0)
            else:
                k = TABLE_SCHEDULE[level][0]
            if self.fine_layers is not None:
                ell = self.fine_layers[i]
            elif (self.table_fine_layers and self.fine_level == TABLE_FINE_LEVEL
                  and TABLE_SCHEDULE.get(level, (None,))[0] == k):
                ell = TABLE_SCHEDULE[level][1]
            else:
                ell = None
            out.append((level, k, ell))
        return out


@dataclass
class ConvergenceRow:
    H: float
    coarse_layers: float
    fine_layers: float
    l2_error: float | None = None
    h1_error: float | None = None
    eoc_l2: float | None = None
    eoc_h1: float | None = None
    newton_iterations: int | None = None
    wall_time: float | None = None
    h1_seminorm_error: float | None = None
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


def make_problem(config):
    """Test problem of ``config`` with the selected diffusion coefficient."""
    problem = test_problem(config.epsilon, linear=config.linear)
    if config.coefficient == "identity":
        problem = problem.with_data(A=identity_coefficient)
    elif config.coefficient == "contrast":
        problem = problem.with_data(A=contrast_coefficient(config.contrast))
    return problem


def _newton_params(config):
    return dict(quad_subdivision=config.quad_subdivision, abstol=config.abstol,
                reltol=config.reltol, max_iter=config.max_iter)


def _eoc(e_prev, e_next, H_prev, H_next):
    if not (e_prev and e_next) or e_prev <= 0 or e_next <= 0:
        return None
    return math.log(e_prev / e_next) / math.log(H_prev / H_next)


def _check_range(u):
    lo, hi = float(u.min()), float(u.max())
    if lo < EXPECTED_RANGE[0] or hi > EXPECTED_RANGE[1]:
        warnings.warn(f"reference solution range [{lo:.4f}, {hi:.4f}] leaves the expected "
                      f"interval {list(EXPECTED_RANGE)}", RuntimeWarning, stacklevel=3)


def run_convergence(config, reference=None):
    """Error table of the multiscale method against the fine solution.

    Parameters
    ----------
    config : ExperimentConfig
    reference : FineScaleSolver, optional
        A fitted fine solve of the same problem, reused instead of recomputed.

    Returns
    -------
    list of ConvergenceRow
        Failed rows carry the reason in ``status`` and no errors.
    """
    problem = make_problem(config)
    fine_n = 2**config.fine_level
    rows = [ConvergenceRow(H=2.0**-level, coarse_layers=k,
                           fine_layers=float(ell if ell is not None else k * 2 ** (config.fine_level - level)))
            for level, k, ell in config.schedule()]

    if reference is None:
        try:
            reference = FineScaleSolver(fine_n=fine_n, **_newton_params(config)).fit(problem)
        except Exception as exc:  # noqa: BLE001 - every row depends on it
            for row in rows:
                row.status = f"reference solve failed: {exc}"
            return rows
    u_h = reference.fine_solution_
    _check_range(u_h)
    space = reference.fine_space_
    laplace, mass = assemble_stiffness(space), assemble_mass(space)

    for row, (level, k, ell) in zip(rows, config.schedule()):
        start = time.perf_counter()
        try:
            est = LODSolver(coarse_n=2**level, fine_n=fine_n, layers=k, fine_layers=ell,
                            variant=config.variant, n_jobs=config.n_jobs,
                            **_newton_params(config)).fit(problem)
        except Exception as exc:  # noqa: BLE001 - the row records the reason
            row.status = f"{type(exc).__name__}: {exc}"
            row.wall_time = time.perf_counter() - start
            logger.warning("row H=%g failed: %s", row.H, row.status)
            continue
        d = est.fine_solution_ - u_h
        row.l2_error = l2_norm(space, d, mass)
        row.h1_seminorm_error = h1_seminorm(space, d, laplace)
        row.h1_error = math.hypot(row.l2_error, row.h1_seminorm_error)
        row.newton_iterations = est.newton_result_.iterations
        row.wall_time = time.perf_counter() - start
        logger.info("H=%g k=%g: L2 %.4g, H1 %.4g (%d its, %.1fs)", row.H, k, row.l2_error,
                    row.h1_error, row.newton_iterations, row.wall_time)

    for prev, nxt in zip(rows, rows[1:]):
        if prev.ok and nxt.ok:
            nxt.eoc_l2 = _eoc(prev.l2_error, nxt.l2_error, prev.H, nxt.H)
            nxt.eoc_h1 = _eoc(prev.h1_error, nxt.h1_error, prev.H, nxt.H)
    return rows


def average_eoc(rows):
    """Mean of the defined EOCs, as ``(l2, h1)``; ``None`` when there are none."""
    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return mean(r.eoc_l2 for r in rows), mean(r.eoc_h1 for r in rows)


def _decay_nodes(J, count):
    if count <= 0 or count >= J:
        return list(range(J))
    return sorted({int(round(x)) for x in np.linspace(0, J - 1, count)})


def run_decay_study(config):
    """Decay profiles of global correctors on the ``decay_level`` coarse mesh.

    Returns rows ``(node, k, tail_energy, fitted_theta)``; ``node`` is the
    coarse DOF index and the last ``k`` of each node is the saturated one.
    """
    if config.fine_level <= config.decay_level:
        raise ValueError("the fine level must be strictly finer than the decay level")
    quad = composite_rule(config.quad_subdivision)
    coarse = FeSpace(build_unit_square_mesh(2**config.decay_level))
    fine = FeSpace(build_unit_square_mesh(2**config.fine_level))
    ctx = LocalizationContext(build_clement(coarse, fine), make_problem(config).A, quad)
    nodes = _decay_nodes(coarse.dimension, config.decay_nodes)
    rows = []
    for j, corrector in zip(nodes, compute_correctors(ctx, None, nodes)):
        profile = decay_profile(j, corrector, ctx)
        theta, _, r2 = fit_decay(profile)
        logger.info("node %d: theta %.3f, r2 %.3f", j, theta, r2)
        rows.extend((j, k, tail, theta) for k, tail in profile)
    return rows


def _row_dict(row):
    out = asdict(row)
    for key, value in out.items():
        if isinstance(value, float):
            out[key] = _round(value)
    return out


def write_rows(rows, path, fmt="csv", config=None):
    """Write convergence rows (``ConvergenceRow``) or decay rows (tuples).

    ``path`` may also be an open text file.
    """
    decay = bool(rows) and not isinstance(rows[0], ConvergenceRow)
    if decay:
        header = ["node", "k", "tail_energy", "fitted_theta"]
        records = [dict(zip(header, (n, k, _round(t), _round(th)))) for n, k, t, th in rows]
    else:
        header = [f.name for f in fields(ConvergenceRow)]
        records = [_row_dict(r) for r in rows]
    if hasattr(path, "write"):
        _write_records(path, header, records, rows, fmt, config, decay)
    else:
        with open(path, "w", newline="") as fh:
            _write_records(fh, header, records, rows, fmt, config, decay)


def _write_records(fh, header, records, rows, fmt, config, decay):
    if fmt == "json":
        payload = {"rows": records}
        if config is not None:
            payload["config"] = asdict(config)
        if not decay:
            l2, h1 = average_eoc(rows)
            payload["average_eoc"] = {"l2": _round(l2), "h1": _round(h1)}
        json.dump(payload, fh, indent=2)
        fh.write("\n")
        return
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for rec in records:
        writer.writerow(["" if rec[h] is None else
                         (format_float(rec[h]) if isinstance(rec[h], float) else rec[h])
                         for h in header])
