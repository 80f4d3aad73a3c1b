"""Command-line verification harness.

Every subcommand reads one JSON config (see :mod:`biharm4.config`), runs a
seeded suite and writes a JSON report (plus a CSV trajectory for
``flow-run``) into the output directory.  Floats are written with 17
significant digits and no timing data is recorded, so identical config and
seed give byte-identical files.

Exit status: 0 when every check passes, 1 when a check fails, 2 when the
config is invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import pointwise as pw
from .config import RunConfig, load_config, tolerance_help
from .errors import Biharm4Error, CalibrationAmbiguous, ConfigError
from .flow import CSV_COLUMNS, run
from .gauge import (build_gauge_pair, coulomb_gauge, identity_residual, pair_from_sphere,
                    random_field_tuple, random_gauge_data, scaling_report,
                    synthesize_connection, uhlenbeck_gauge)
from .potentials import (PotentialSet, build_general_extrinsic, build_sphere_extrinsic,
                         build_sphere_intrinsic, calibrate_signs, clifford_map,
                         great_circle_map, pde_residual, random_potentials, random_sphere_map,
                         random_target_map, small_circle_map, system_rhs)
from .spectral import Grid, random_smooth
from .targets import Sphere, make_target

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# -- deterministic output -------------------------------------------------------

def _plain(obj):
    """Convert numpy scalars/arrays and tuples to plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def format_float(x: float) -> str:
    return f"{x:.17g}" if math.isfinite(x) else "null"


def dumps(obj, indent: int = 0) -> str:
    """JSON text with sorted keys and every float printed to 17 digits."""
    obj = _plain(obj)
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, float):
        return format_float(obj)
    return json.dumps(obj)


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n")


def write_csv(path: Path, rows, columns=CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v
                             for v in (_plain(row[c]) for c in columns)])


# -- checks ----------------------------------------------------------------------

class Suite:
    """Collects named checks ``value <= bound`` and free-form records."""

    def __init__(self, name: str, config: RunConfig):
        self.name = name
        self.config = config
        self.checks = []
        self.records = {}

    def check(self, name, value, bound, passed=None, **detail):
        value = float(value)
        ok = bool(value <= bound) if passed is None else bool(passed)
        self.checks.append({"name": name, "value": value, "bound": float(bound), "passed": ok,
                            **detail})
        return ok

    def fail(self, name, error: Exception):
        self.checks.append({"name": name, "passed": False,
                            "error": f"{type(error).__name__}: {error}"})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def report(self) -> dict:
        return {"command": self.name, "version": __version__, "config": self.config.to_dict(),
                "seed": self.config.seed, "checks": self.checks, "records": self.records,
                "passed": self.passed}


def _seeds(cfg: RunConfig, count: int):
    return [cfg.seed + i for i in range(count)]


def _kmax(n: int) -> int:
    # Modes up to 2 alias in the flux products on 8^4 but not on 16^4.
    return 2


# -- subcommands -----------------------------------------------------------------

def cmd_verify_identity(cfg: RunConfig) -> Suite:
    """Flux identity on random field tuples at ``n`` and ``2n``."""
    suite = Suite("verify-identity", cfg)
    n = cfg.grid_n
    grids = (Grid(n), Grid(2 * n))
    zero = random_field_tuple(grids[0], cfg.m, cfg.seed, kmax=_kmax(n))
    for f in zero.arrays():
        f[...] = 0.0
    r0, _, _ = identity_residual(grids[0], *zero.arrays())
    suite.check("zero_fields", r0, 0.0)
    for seed in _seeds(cfg, cfg.n_seeds):
        coarse, fine = (identity_residual(g, *random_field_tuple(g, cfg.m, seed, _kmax(n)).arrays())
                        for g in grids)
        scale = random_field_tuple(grids[1], cfg.m, seed, _kmax(n)).combined_norm(grids[1])
        ratio = fine[0] / coarse[0] if coarse[0] > 0 else 0.0
        suite.check(f"seed_{seed}_ratio", ratio, cfg.tol("identity_ratio"),
                    r_total_n=coarse[0], r_total_2n=fine[0])
        suite.check(f"seed_{seed}_abs", fine[0] / scale, cfg.tol("identity_abs"),
                    combined_norm=scale, r_pde=fine[1], r_gauge=fine[2])
    return suite


def _antisym_defect(X, axes):
    return float(np.max(np.abs(X + np.swapaxes(X, *axes))))


def _pointwise_omega(grid, u):
    """``u^i lap u^j - u^j lap u^i`` as a pointwise product."""
    a = np.einsum("i...,j...->ij...", u, grid.laplacian(u))
    return a - np.swapaxes(a, 0, 1)


def _div_free_fixtures(grid):
    return {
        "great_circle_extrinsic": (great_circle_map(grid), build_sphere_extrinsic, False),
        "small_circle_intrinsic": (small_circle_map(grid), build_sphere_intrinsic, False),
        "clifford_extrinsic": (clifford_map(grid, (3, 1, 0, 0), (1, -3, 0, 0)),
                               build_sphere_extrinsic, True),
        "clifford_intrinsic": (clifford_map(grid, (3, 1, 0, 0), (1, 1, 0, 0)),
                               build_sphere_intrinsic, True),
    }


def cmd_verify_potentials(cfg: RunConfig) -> Suite:
    """Antisymmetry, div W = 0 on critical fixtures, splitting, sign calibration."""
    suite = Suite("verify-potentials", cfg)
    n = cfg.grid_n
    coarse, fine = Grid(n), Grid(2 * n)
    target = make_target(cfg.target_spec())

    u = random_sphere_map(coarse, cfg.m, cfg.seed, amplitude=cfg.amplitude, kmax=_kmax(n))
    for build in (build_sphere_extrinsic, build_sphere_intrinsic):
        pots = build(coarse, u, sigma=1)
        suite.check(f"{pots.kind}_V_antisymmetric", _antisym_defect(pots.V, (1, 2)), 0.0)
        suite.check(f"{pots.kind}_omega_antisymmetric", _antisym_defect(pots.omega, (0, 1)), 0.0)

    fixtures = {name: [] for name in _div_free_fixtures(coarse)}
    for grid in (coarse, fine):
        for name, (v, build, _) in _div_free_fixtures(grid).items():
            pots = build(grid, v, sigma=1)
            W_norm = grid.norm(pots.W)
            omega_pw = _pointwise_omega(grid, v)
            split = grid.norm(pots.W - grid.gradient(omega_pw) - pots.F) / W_norm
            fixtures[name].append((grid.norm(grid.divergence(pots.W)), W_norm, split))
    for name, (_, _, refine) in _div_free_fixtures(coarse).items():
        (d_n, _, _), (d_2n, W_2n, split) = fixtures[name]
        suite.check(f"{name}_div_W", d_2n / W_2n, cfg.tol("div_free"),
                    div_W_n=d_n, div_W_2n=d_2n, W_norm=W_2n)
        if refine:
            suite.check(f"{name}_refinement", d_2n / d_n, cfg.tol("refinement_ratio"))
        suite.check(f"{name}_splitting", split, cfg.tol("splitting"))

    clifford = clifford_map(fine, (3, 1, 0, 0), (1, -3, 0, 0))
    rs = system_rhs(fine, clifford, build_sphere_extrinsic(fine, clifford, sigma=-1))
    rg = system_rhs(fine, clifford, build_general_extrinsic(fine, clifford, Sphere(4), sigma=1))
    suite.check("sphere_vs_generic_path", fine.norm(rs + rg) / fine.norm(rs),
                cfg.tol("generic_path"))

    builders = [("sphere_extrinsic", Sphere(cfg.m))] if isinstance(target, Sphere) else []
    builders.append(("general_extrinsic", target))
    for builder, tgt in builders:
        sample = random_target_map(fine, tgt, cfg.seed, amplitude=cfg.amplitude, kmax=1)
        try:
            rep = calibrate_signs(fine, [sample], builder=builder, target=tgt, n_directions=5,
                                  rtol=cfg.tol("calibration"), rng=cfg.seed, return_report=True)
        except CalibrationAmbiguous as exc:
            suite.fail(f"{builder}_calibration", exc)
            continue
        suite.check(f"{builder}_calibration", rep.max_rel_error[rep.sigma],
                    cfg.tol("calibration"), sigma=rep.sigma,
                    other_sign_error=rep.max_rel_error[-rep.sigma])
        if builder == "sphere_extrinsic":
            gc = great_circle_map(fine, cfg.m)
            res = pde_residual(fine, gc, build_sphere_extrinsic(fine, gc, sigma=rep.sigma))
            suite.check("great_circle_residual", fine.norm(res), cfg.tol("critical_residual"))
    return suite


def cmd_calibrate_signs(cfg: RunConfig) -> Suite:
    """Calibrated sign of each potential builder against the variational oracle."""
    suite = Suite("calibrate-signs", cfg)
    grid = Grid(2 * cfg.grid_n)
    target = make_target(cfg.target_spec())
    runs = [("general_extrinsic", target, "extrinsic")]
    if isinstance(target, Sphere):
        runs = [("sphere_extrinsic", target, "extrinsic"),
                ("sphere_intrinsic", target, "intrinsic")] + runs
    for builder, tgt, energy in runs:
        sample = random_target_map(grid, tgt, cfg.seed, amplitude=cfg.amplitude, kmax=1)
        try:
            rep = calibrate_signs(grid, [sample], builder=builder, target=tgt, energy=energy,
                                  n_directions=5, rtol=cfg.tol("calibration"), rng=cfg.seed,
                                  return_report=True)
        except CalibrationAmbiguous as exc:
            suite.fail(builder, exc)
            continue
        suite.check(builder, rep.max_rel_error[rep.sigma], cfg.tol("calibration"),
                    sigma=rep.sigma, other_sign_error=rep.max_rel_error[-rep.sigma])
    return suite


def cmd_gauge(cfg: RunConfig) -> Suite:
    """Coulomb, Uhlenbeck and gauge-pair constructions with scaling under eps -> eps/2."""
    suite = Suite("gauge-build", cfg)
    grid = Grid(cfg.grid_n)
    m = cfg.m
    kmax = _kmax(cfg.grid_n)

    zero = build_gauge_pair(grid, PotentialSet.zeros(grid, m), cfg.pair_epsilon)
    suite.check("zero_potentials_A_minus_I",
                grid.norm(zero.A - pw.identity(m, grid.shape)), 0.0)

    gc = great_circle_map(grid, m)
    exact = pair_from_sphere(grid, build_sphere_extrinsic(grid, gc))
    suite.check("great_circle_pair", exact.residual_gauge_eq,
                cfg.tol("pair") * (1.0 + exact.pots.size(grid)))

    a = random_smooth(grid, (m, m), cfg.seed, kmax=kmax, zero_mean=True)
    omega = a - np.swapaxes(a, 0, 1)
    Omega = coulomb_gauge(grid, omega)
    suite.check("coulomb", grid.norm(grid.divergence(Omega) + omega) / grid.norm(omega),
                cfg.tol("coulomb"))

    U, xi = random_gauge_data(grid, m, cfg.seed, kmax=kmax)
    Omega = synthesize_connection(grid, U, xi)
    tol = cfg.tol("uhlenbeck")
    try:
        gauge = uhlenbeck_gauge(grid, Omega, eps_gauge=cfg.gauge_epsilon,
                                rtol=0.1 * tol / max(grid.norm(Omega), 1.0))
        history = gauge.history
        suite.check("uhlenbeck_residual", gauge.residual, tol, iterations=len(history))
        suite.check("uhlenbeck_monotone", 0.0, 0.0,
                    passed=all(b <= a for a, b in zip(history, history[1:])))
        suite.records["uhlenbeck_history"] = history
    except Biharm4Error as exc:
        suite.fail("uhlenbeck_residual", exc)

    for seed in _seeds(cfg, cfg.pair_seeds):
        pots = random_potentials(grid, m, seed, kmax=kmax)
        try:
            pair = build_gauge_pair(grid, pots, cfg.pair_epsilon, eps_gauge=cfg.gauge_epsilon,
                                    rtol=cfg.tol("pair"))
        except Biharm4Error as exc:
            suite.fail(f"pair_seed_{seed}", exc)
            continue
        rel = pair.residual_gauge_eq / (1.0 + pair.pots.size(grid))
        suite.check(f"pair_seed_{seed}", rel, cfg.tol("pair"), iterations=pair.iterations,
                    dist_to_SO=pair.dist_to_SO, history=pair.history)

    try:
        rep = scaling_report(grid, random_potentials(grid, m, cfg.seed, kmax=kmax),
                             cfg.pair_epsilon, eps_gauge=cfg.gauge_epsilon)
        f = cfg.tol("scaling_factor")
        for name in ("A_minus_I", "B"):
            ratio = rep[name]["ratio"]
            suite.check(f"scaling_{name}", abs(math.log(ratio / 2.0)), math.log(f),
                        ratio=ratio, exponent=rep[name]["exponent"],
                        at_eps=rep[name]["eps"], at_eps_half=rep[name]["eps_half"])
    except Biharm4Error as exc:
        suite.fail("scaling", exc)
    return suite


def cmd_flow(cfg: RunConfig) -> tuple[Suite, list]:
    """Extrinsic flow from a random perturbation of a constant map."""
    if cfg.energy != "extrinsic":
        raise ConfigError("flow-run supports energy = 'extrinsic' only")
    if cfg.target_spec().get("kind", "sphere") != "sphere":
        raise ConfigError("flow-run supports the sphere target only")
    suite = Suite("flow-run", cfg)
    grid = Grid(cfg.grid_n)
    u0 = random_sphere_map(grid, cfg.m, cfg.seed, amplitude=cfg.amplitude, kmax=_kmax(cfg.grid_n))
    try:
        traj = run(grid, u0, cfg.dt, cfg.t_end, cfg.epsilon, diag_every=cfg.diag_every)
    except Biharm4Error as exc:
        suite.fail("run", exc)
        return suite, []
    s = traj.summary
    suite.records["summary"] = s
    suite.check("energy_monotone", 0.0, 0.0, passed=s["energy_monotone"],
                energy_initial=s["energy_initial"], energy_final=s["energy_final"])
    suite.check("on_target", s["max_target_offset"], cfg.tol("on_target"))
    return suite, traj.rows


# -- entry point -----------------------------------------------------------------

COMMANDS = {
    "verify-identity": cmd_verify_identity,
    "verify-potentials": cmd_verify_potentials,
    "gauge-build": cmd_gauge,
    "flow-run": cmd_flow,
    "calibrate-signs": cmd_calibrate_signs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biharm4",
        description="Seeded verification suites for biharmonic-map conservation laws on T^4.",
        epilog="tolerance names (config key 'tolerances'):\n" + tolerance_help()
        + "\n\nexit status: 0 all checks pass, 1 a check failed, 2 invalid config."
        "\nBIHARM4_THREADS caps the FFT worker count.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides out_dir)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out) if args.out is not None else Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = None
    if isinstance(result, tuple):
        result, rows = result
    if rows is not None:
        write_csv(out / f"{args.command}.csv", rows)
    report_path = out / f"{args.command}.json"
    write_json(report_path, result.report())
    for c in result.checks:
        status = "PASS" if c["passed"] else "FAIL"
        detail = c.get("error") or f"{c['value']:.3e} <= {c['bound']:.3e}"
        print(f"{status} {c['name']}: {detail}")
    print(f"report: {report_path}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
