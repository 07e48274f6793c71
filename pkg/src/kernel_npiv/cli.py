"""Command-line entry point.

Exit status is 0 on success, 1 for invalid input (bad flags, config or
files) and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import (
    ConfigError,
    build_filter,
    build_instance,
    build_kernel,
    build_rate_params,
    default_output_dir,
    dump_yaml,
    load_config,
    resolve_config,
)
from .experiments import (
    StudyError,
    run_confounding_demo,
    run_minnorm_study,
    run_rate_study,
    run_saturation_study,
    write_csv,
    write_summary,
)
from .filters import VARIANTS, FilterSpec, verify_filter_conditions
from .oracle import link_parameters
from .rates import RateParams, exponent_and_schedule, lower_bound_exponent
from .scenarios import continuous_demo, sample_discrete, write_dataset_csv
from .stage1 import fit_stage1
from .stage2 import fit_npiv

log = logging.getLogger("kernel_npiv")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so errors map to status 1."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. experiment.seed=3 (repeatable)")
    p.add_argument("-o", "--output-dir", help="output directory (default: config, then $KERNEL_NPIV_OUTPUT, then ./runs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kernel-npiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit both stages on a dataset file and write predictions")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with columns split,z,x,y")
    p.add_argument("--query", help="CSV with an x column; defaults to the stage-2 x values or the stage-1 ones")
    p.add_argument("--discrete", action="store_true",
                   help="points are atom indices of the configured instance; use its Gram matrices")

    p = sub.add_parser("simulate", help="draw a dataset from the configured scenario")
    _common(p)
    p.add_argument("-m", type=int, help="stage-1 sample size")
    p.add_argument("-n", type=int, help="stage-2 sample size")

    p = sub.add_parser("rates", help="empirical rate slope against the theory")
    _common(p)
    p.add_argument("--theory", action="store_true", help="print the case table only")

    for name, text in (("minnorm", "convergence to the minimum-norm solution"),
                       ("saturation", "stage-1 slopes across filters"),
                       ("demo", "NPIV against direct regression on the confounded design")):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("filters-check", help="grid check of the two filter conditions")
    _common(p)
    p.add_argument("--kappa-sq", type=float, default=1.0)
    p.add_argument("--x-grid", type=int, default=200)
    p.add_argument("--theta-grid", type=int, default=50)
    p.add_argument("--rho-probe", type=float, help="probe every filter at this qualification")
    p.add_argument("--nu", type=int, default=3, help="nu for iterated Tikhonov")
    p.add_argument("--step-tau", type=float, default=1.0, help="step size for Landweber")

    p = sub.add_parser("theory", help="rate exponents and schedule for given parameters")
    p.add_argument("--params", help="YAML mapping of rate parameters")
    for flag in ("beta-x", "p-x", "gamma0", "gamma1", "beta-z", "p-z", "alpha-z", "a", "gamma"):
        p.add_argument(f"--{flag}", type=float)
    p.add_argument("--c-f", type=int, choices=(0, 1))
    return parser


def _resolve(args) -> dict:
    base_dir = None
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = load_config(args.config)
        base_dir = Path(args.config).parent
    cfg = resolve_config(file_cfg, args.overrides, base_dir=base_dir)
    exp = cfg["experiment"]
    for flag, key in (("seed", "seed"), ("replicates", "replicates"), ("workers", "workers"),
                      ("output_dir", "output_dir")):
        v = getattr(args, flag, None)
        if v is not None:
            exp[key] = v
    return cfg


def _prepare_output(cfg: dict, command: str, argv) -> Path:
    out = default_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "argv": list(argv), "version": __version__, "config": cfg}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    (out / "config.resolved.yaml").write_text(dump_yaml(cfg))
    return out


# subcommands ---------------------------------------------------------------------

def _read_dataset(path: Path):
    if not path.is_file():
        raise ConfigError(f"{path}: data file not found")
    s1, s2 = ([], []), ([], [], [])
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"split", "z", "x", "y"} - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}:1: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                if row["split"] == "1":
                    s1[0].append(float(row["z"]))
                    s1[1].append(float(row["x"]))
                elif row["split"] == "2":
                    s2[0].append(float(row["z"]))
                    s2[1].append(float(row["x"]) if row["x"] else np.nan)
                    s2[2].append(float(row["y"]))
                else:
                    raise ValueError(f"split must be 1 or 2, got {row['split']!r}")
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not s1[0] or not s2[0]:
        raise ConfigError(f"{path}: both splits need at least one row")
    return tuple(map(np.asarray, s1)), tuple(map(np.asarray, s2))


def cmd_fit(args, cfg) -> int:
    (z1, x1), (z2, x2, y2) = _read_dataset(Path(args.data))
    filt = build_filter(cfg["filter"])
    xi, lam = float(cfg["schedule"]["xi"]), float(cfg["schedule"]["lambda"])
    if args.discrete:
        inst = build_instance(cfg)
        kx, kz = inst.kernel_x, inst.kernel_z
        z1, x1, z2 = (a.astype(np.intp) for a in (z1, x1, z2))
    else:
        kx, kz = build_kernel(cfg["kernels"]["x"]), build_kernel(cfg["kernels"]["z"])
    s1 = fit_stage1(z1, x1, kz, kx, filt, xi)
    est = fit_npiv(s1, z2, y2, lam)
    if args.query:
        qpath = Path(args.query)
        if not qpath.is_file():
            raise ConfigError(f"{qpath}: query file not found")
        with qpath.open(newline="") as fh:
            xq = np.asarray([float(r["x"]) for r in csv.DictReader(fh)])
    elif not np.any(np.isnan(x2)):
        xq = np.unique(x2)
    else:
        xq = np.unique(x1)
    if args.discrete:
        xq = xq.astype(np.intp)
    pred = est.predict(xq)
    out = _prepare_output(cfg, "fit", args.argv)
    write_csv(out / "predictions.csv", ({"x": x, "h": h} for x, h in zip(xq, pred)))
    print(f"fitted m={s1.m} n={est.n}; {len(xq)} predictions written to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    exp = cfg["experiment"]
    m = args.m if args.m is not None else int(exp["m"])
    n = args.n if args.n is not None else int(exp["n"])
    out = _prepare_output(cfg, "simulate", args.argv)
    path = out / "dataset.csv"
    if cfg["scenario"]["kind"] == "discrete":
        inst = build_instance(cfg)
        s = sample_discrete(inst, m, n, int(exp["seed"]))
        write_dataset_csv(path, (s.z1, s.x1), (s.z2, s.y2))
    elif cfg["scenario"]["kind"] == "continuous_demo":
        d = continuous_demo(n, m, int(exp["seed"]), float(cfg["scenario"]["confounding_strength"]))
        write_dataset_csv(path, (d.z1, d.x1), (d.z2, d.x2, d.y2))
    else:
        raise ConfigError(f"unknown scenario kind {cfg['scenario']['kind']!r}")
    print(f"wrote m={m} stage-1 and n={n} stage-2 rows to {path}")
    return EXIT_OK


def _theory_table(p: RateParams) -> str:
    res = exponent_and_schedule(p)
    lines = [
        f"case                     {res.case_label}",
        f"lambda exponent          {res.lambda_exponent:.6g}",
        f"squared-error exponent   {res.squared_error_exponent:.6g}",
        f"xi exponent (in m)       {1.0 / (p.beta_z + p.p_z):.6g}",
        f"lower-bound exponent     {lower_bound_exponent(p):.6g}",
    ]
    return "\n".join(lines)


def cmd_rates(args, cfg) -> int:
    inst = build_instance(cfg)
    theory = link_parameters(inst)
    params = build_rate_params(cfg, theory)
    if args.theory:
        print(_theory_table(params))
        return EXIT_OK
    exp, sch = cfg["experiment"], cfg["schedule"]
    rep = run_rate_study(inst, params, exp["n_grid"], int(exp["replicates"]), int(exp["seed"]),
                         filt=build_filter(cfg["filter"]), c_xi=float(sch["c_xi"]),
                         c_lambda=float(sch["c_lambda"]), method=exp["method"],
                         workers=int(exp["workers"]))
    out = _prepare_output(cfg, "rates", args.argv)
    write_csv(out / "rates.csv", rep.rows())
    tol = float(exp["slope_tolerance"])
    ok = rep.slope_gap <= tol and rep.jensen_violations == 0
    write_summary(out / "summary.json", "rates", rep.params,
                  {"fitted": rep.fitted_slope, "fitted_se": rep.slope_se, "theory": rep.theory_slope},
                  {"slope": tol, "jensen": 1e-10}, ok)
    print(f"case {rep.case_label}: fitted slope {rep.fitted_slope:.4f} (se {rep.slope_se:.4f}), "
          f"theory {rep.theory_slope:.4f}, Jensen violations {rep.jensen_violations} -> "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_minnorm(args, cfg) -> int:
    inst = build_instance(cfg)
    exp, sch = cfg["experiment"], cfg["schedule"]
    rep = run_minnorm_study(inst, exp["sizes"], int(exp["replicates"]), int(exp["seed"]),
                            xi_power=float(sch["xi_power"]), lambda_power=float(sch["lambda_power"]),
                            c_xi=float(sch["c_xi"]), c_lambda=float(sch["c_lambda"]),
                            filt=build_filter(cfg["filter"]), method=exp["method"],
                            workers=int(exp["workers"]))
    out = _prepare_output(cfg, "minnorm", args.argv)
    write_csv(out / "minnorm.csv", rep.rows())
    e_star, e_h0 = rep.mean_err_to_hstar, rep.mean_err_to_h0
    ok = bool(e_star[-1] < 0.5 * e_star[0] and e_h0[-1] >= 0.5 * rep.floor and rep.jensen_violations == 0)
    write_summary(out / "summary.json", "minnorm", rep.params,
                  {"err_to_hstar": e_star, "err_to_h0": e_h0, "floor": rep.floor},
                  {"hstar_ratio": 0.5, "h0_plateau_fraction": 0.5}, ok)
    for s, a, b in zip(rep.sizes, e_star, e_h0):
        print(f"n=m={s:<7d} mean l2x to h*: {a:.5f}   to h0: {b:.5f}")
    print(f"floor {rep.floor:.5f} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_saturation(args, cfg) -> int:
    inst = build_instance(cfg)
    exp, sch = cfg["experiment"], cfg["schedule"]
    filters = [build_filter(d) for d in exp["filters"]]
    if "tikhonov" not in [f.variant for f in filters]:
        raise ConfigError("experiment.filters must include tikhonov")
    rep = run_saturation_study(inst, filters, exp["m_grid"], int(exp["replicates"]), int(exp["seed"]),
                               xi_power=float(sch["xi_power"]), c_xi=float(sch["c_xi"]),
                               workers=int(exp["workers"]))
    out = _prepare_output(cfg, "saturation", args.argv)
    write_csv(out / "saturation.csv", rep.rows())
    slack = float(exp["ordering_slack"])
    base = rep.slopes["tikhonov"][0]
    ok = all(s >= base - slack for lab, (s, _) in rep.slopes.items() if lab != "tikhonov")
    write_summary(out / "summary.json", "saturation", rep.params,
                  {lab: {"slope": s, "se": se} for lab, (s, se) in rep.slopes.items()},
                  {"ordering_slack": slack}, ok)
    for lab, (s, se) in rep.slopes.items():
        print(f"{lab:<26s} slope {s:.4f} (se {se:.4f})")
    print("PASS" if ok else "FAIL")
    return EXIT_OK


def cmd_demo(args, cfg) -> int:
    exp, sch = cfg["experiment"], cfg["schedule"]
    rep = run_confounding_demo(int(exp["n"]), int(exp["m"]), int(exp["seed"]),
                               float(cfg["scenario"]["confounding_strength"]),
                               build_kernel(cfg["kernels"]["x"]), build_kernel(cfg["kernels"]["z"]),
                               build_filter(cfg["filter"]), float(sch["xi"]), float(sch["lambda"]))
    out = _prepare_output(cfg, "demo", args.argv)
    write_csv(out / "demo.csv", rep.rows())
    ok = rep.npiv_mse < rep.krr_mse
    write_summary(out / "summary.json", "demo", rep.params,
                  {"npiv_mse": rep.npiv_mse, "krr_mse": rep.krr_mse}, {}, ok)
    print(f"test-grid MSE: NPIV {rep.npiv_mse:.5f}, direct KRR {rep.krr_mse:.5f}")
    return EXIT_OK


def cmd_filters_check(args, cfg) -> int:
    specs = []
    for v in VARIANTS:
        if v == "landweber":
            specs.append(FilterSpec.landweber(args.step_tau))
        elif v == "iterated_tikhonov":
            specs.append(FilterSpec.iterated_tikhonov(args.nu))
        else:
            specs.append(FilterSpec(v))
    xi_grid = np.logspace(-4, 0, 13)
    print(f"{'filter':<24s}{'rho':>6s}{'E':>6s}{'omega':>11s}{'cond1':>11s}{'cond2':>11s}  result")
    all_ok = True
    rows = []
    for s in specs:
        r = verify_filter_conditions(s, args.kappa_sq, xi_grid, args.x_grid, args.theta_grid,
                                     rho_probe=args.rho_probe)
        verdict = ("pass" if r.passed else "FAIL") + (" (expected fail)" if r.expected_fail else "")
        all_ok &= r.as_expected
        print(f"{r.filter:<24s}{r.rho_probe:>6.3g}{r.const_E:>6.3g}{r.omega:>11.5g}"
              f"{r.cond1_max:>11.5g}{r.cond2_max:>11.5g}  {verdict}")
        rows.append({"filter": r.filter, "rho_probe": r.rho_probe, "E": r.const_E, "omega": r.omega,
                     "cond1_max": r.cond1_max, "cond2_max": r.cond2_max, "pass": r.passed,
                     "expected_fail": r.expected_fail})
    if cfg["experiment"].get("output_dir") or args.output_dir:
        out = _prepare_output(cfg, "filters-check", args.argv)
        write_csv(out / "filters.csv", rows)
    return EXIT_OK if all_ok else EXIT_NUMERICAL


def cmd_theory(args) -> int:
    d = {}
    if args.params:
        path = Path(args.params)
        if not path.is_file():
            raise ConfigError(f"{path}: parameter file not found")
        d = load_config(path)
    for key in ("beta_x", "p_x", "gamma0", "gamma1", "beta_z", "p_z", "alpha_z", "a", "gamma", "c_f"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    d.setdefault("gamma0", 1.0)
    d.setdefault("gamma1", 1.0)
    try:
        p = RateParams(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    print(_theory_table(p))
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "minnorm": cmd_minnorm,
    "saturation": cmd_saturation,
    "demo": cmd_demo,
    "filters-check": cmd_filters_check,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        if args.command == "theory":
            return cmd_theory(args)
        cfg = _resolve(args)
        return _COMMANDS[args.command](args, cfg)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StudyError as exc:
        if isinstance(exc.__cause__, (np.linalg.LinAlgError, FloatingPointError)):
            print(f"numerical error: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
