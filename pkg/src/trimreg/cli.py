"""Command-line front end.

Exit status: 0 on success, 1 on usage errors (bad flags, missing or invalid
config), 2 on numerical failure (divergence, loss of positive definiteness).
"""

import argparse
import dataclasses
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import PenaltySpec, solve_dc_trimmed, solve_prox_gradient
from .bcd import solve_bcd
from .datagen import (
    gen_diamond_ggm,
    gen_linear_m1,
    gen_linear_m2,
    incoherence_diagnostics,
    m1_covariance,
    m2_covariance,
    read_dataset_csv,
    write_dataset_csv,
)
from .experiments import (
    TRACE_COLUMNS,
    ConvergencePlan,
    ExperimentPlan,
    GgmPlan,
    InitStudyPlan,
    PRESETS,
    run_convergence_comparison,
    run_error_curves,
    run_ggm_diamond,
    run_initialization_study,
    run_support_recovery,
    write_csv,
)
from .losses import GaussianGraphicalLoss, LeastSquaresLoss, NotPositiveDefinite
from .problem import BcdConfig, DivergenceError, TrimmedProblem

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
MANIFEST_VERSION = 1
DEFAULT_OUT_DIR = "results"

EXPERIMENTS = {
    "support-recovery": (ExperimentPlan, run_support_recovery),
    "error-curves": (ExperimentPlan, run_error_curves),
    "convergence": (ConvergencePlan, run_convergence_comparison),
    "ggm-diamond": (GgmPlan, run_ggm_diamond),
    "init-study": (InitStudyPlan, run_initialization_study),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    parent = _Parser(add_help=False)
    g = parent.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=None,
                   help="base seed (overrides the config's base_seed; plan default 0)")
    g.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")
    g.add_argument("--out-dir", default=None,
                   help=f"output directory (default: $TRIMREG_OUT_DIR, else ./{DEFAULT_OUT_DIR})")
    g.add_argument("--trace", action="store_true", help="emit per-iteration traces")
    g.add_argument("--config", default=None, help="JSON config file or a run manifest")
    return parent


def _plan_epilog(cls):
    lines = ["config keys and defaults:"]
    for f in dataclasses.fields(cls):
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        lines.append(f"  {f.name} = {json.dumps(default)}")
    return "\n".join(lines)


def build_parser():
    common = _common()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="trimreg", description="Trimmed l1 estimation: solvers, data and experiments.")
    parser.add_argument("--version", action="version", version=f"trimreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="fit one problem from a dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--data", required=True, help="dataset CSV written by 'gen'")
    s.add_argument("--lam", type=float, required=True, help="regularization weight lambda")
    s.add_argument("--h", type=int, default=0, help="trim count (ordered entries for graphical data)")
    s.add_argument("--method", default="trimmed", choices=["trimmed", "dc", "lasso", "scad", "mcp"])
    s.add_argument("--eta", default="auto", help="parameter step size or 'auto' for 1/L_f")
    s.add_argument("--tau", type=float, default=None, help="weight step size (default 1/lambda)")
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--tol", type=float, default=1e-6, help="stationarity tolerance on T")
    s.add_argument("--w-update", default="gradient_step", choices=["gradient_step", "exact_minimize"])
    s.add_argument("--init", default="zero", choices=["zero", "minnorm"], help="regression starting point")
    s.add_argument("--scad-a", type=float, default=3.0)
    s.add_argument("--mcp-gamma", type=float, default=2.5)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g.add_argument("--design", default="M2", choices=["M2", "M1", "diamond"])
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--p", type=int, default=64)
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--theta-cov", type=float, default=None, help="design correlation (M2: 0.7, M1: 0.3)")
    g.add_argument("--beta-sd", type=float, default=5.0)
    g.add_argument("--noise-sd", type=float, default=1.0)
    g.add_argument("--rho", type=float, default=0.1, help="diamond-graph correlation")
    g.add_argument("--output", default=None, help="file name (default <out-dir>/dataset.csv)")

    e = sub.add_parser("exp", help="run an experiment")
    esub = e.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name, (cls, _) in EXPERIMENTS.items():
        ep = esub.add_parser(name, parents=[common], formatter_class=fmt, epilog=_plan_epilog(cls),
                             help=f"run the {name} study")
        ep.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override one config key, e.g. --set replicates=10")
        if cls is ExperimentPlan:
            presets = sorted(n for n, (kind, _) in PRESETS.items() if kind == name)
            ep.add_argument("--preset", choices=presets, default=None, help="start from a named plan")
            ep.add_argument("--replicates", type=int, default=None)
        if cls is ConvergencePlan:
            ep.add_argument("--lambdas", default=None, help="comma-separated lambdas (default 0.5,5,20)")
        if cls is GgmPlan:
            ep.add_argument("--replicates", type=int, default=None)
        if cls is InitStudyPlan:
            ep.add_argument("--num-inits", type=int, default=None)

    d = sub.add_parser("diag", help="diagnostics")
    dsub = d.add_subparsers(dest="diagnostic", required=True, parser_class=_Parser)
    inc = dsub.add_parser("incoherence", parents=[common], help="incoherence quantities over random trim sets",
                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    inc.add_argument("--data", default=None, help="regression dataset CSV (uses its Gram matrix)")
    inc.add_argument("--population", choices=["M1", "M2"], default=None,
                     help="use the population covariance instead of data")
    inc.add_argument("--p", type=int, default=64)
    inc.add_argument("--k", type=int, default=4)
    inc.add_argument("--theta-cov", type=float, default=None)
    inc.add_argument("--h", type=int, default=0)
    inc.add_argument("--num-samples", type=int, default=100)
    return parser


# ---------------------------------------------------------------- helpers


def _out_dir(args):
    return args.out_dir or os.environ.get("TRIMREG_OUT_DIR") or DEFAULT_OUT_DIR


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _load_json(path):
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    if "manifest_version" in data:
        return data.get("config", {})
    return data


def _write_manifest(out_dir, command, config, seed, started, outputs):
    manifest = dict(
        manifest_version=MANIFEST_VERSION, tool="trimreg", version=__version__, command=command,
        config=config, base_seed=seed, started=started, finished=_now(),
        outputs=[os.path.relpath(p, out_dir) for p in outputs],
    )
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_override(item):
    key, sep, value = item.partition("=")
    if not sep:
        raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _resolve_plan(args):
    cls, _ = EXPERIMENTS[args.experiment]
    data = {}
    if getattr(args, "preset", None):
        data.update(PRESETS[args.preset][1])
    if args.config:
        data.update(_load_json(args.config))
    for item in args.set:
        key, value = _parse_override(item)
        data[key] = value
    if args.seed is not None:
        data["base_seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        data["replicates"] = args.replicates
    if getattr(args, "num_inits", None) is not None:
        data["num_inits"] = args.num_inits
    if getattr(args, "lambdas", None):
        try:
            data["lambdas"] = [float(v) for v in args.lambdas.split(",")]
        except ValueError:
            raise UsageError(f"--lambdas must be comma-separated numbers, got {args.lambdas!r}") from None
    try:
        return cls.from_dict(data)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_exp(args):
    plan = _resolve_plan(args)
    _, runner = EXPERIMENTS[args.experiment]
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    started = _now()
    if args.trace:
        print(f"running {args.experiment} with {json.dumps(plan.to_dict(), sort_keys=True)}", file=sys.stderr)
    report = runner(plan, jobs=args.jobs)
    outputs = report.write(out_dir)
    if args.experiment == "init-study":
        outputs.append(write_csv(os.path.join(out_dir, f"{plan.experiment_id}_summary.csv"),
                                 tuple(report.extras["summary"]), [report.extras["summary"]]))
    if args.experiment == "error-curves":
        rows = [dict(zip(("method", "p", "k", "h"), key.split("|")), slope=v)
                for key, v in report.extras["slopes"].items()]
        outputs.append(write_csv(os.path.join(out_dir, f"{plan.experiment_id}_slopes.csv"),
                                 ("method", "p", "k", "h", "slope"), rows))
    manifest = _write_manifest(out_dir, ["exp", args.experiment], plan.to_dict(), plan.base_seed, started, outputs)
    for path in outputs + [manifest]:
        print(path)
    return EXIT_OK


def cmd_gen(args):
    seed = 0 if args.seed is None else args.seed
    try:
        if args.design == "M2":
            theta = 0.7 if args.theta_cov is None else args.theta_cov
            ds = gen_linear_m2(args.n, args.p, args.k, theta, args.beta_sd, seed, args.noise_sd)
        elif args.design == "M1":
            theta = 0.3 if args.theta_cov is None else args.theta_cov
            ds = gen_linear_m1(args.n, args.p, args.k, theta, args.beta_sd, seed, args.noise_sd)
        else:
            ds = gen_diamond_ggm(args.n, args.rho, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = _out_dir(args)
    path = args.output or os.path.join(out_dir, "dataset.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    started = _now()
    write_dataset_csv(ds, path)
    config = dict(vars(args))
    config.pop("config", None)
    manifest = _write_manifest(os.path.dirname(os.path.abspath(path)), ["gen"], config, seed, started, [path])
    print(path)
    print(manifest)
    return EXIT_OK


def _load_dataset(path):
    if not os.path.isfile(path):
        raise UsageError(f"dataset file not found: {path}")
    try:
        return read_dataset_csv(path)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}") from None


def cmd_solve(args):
    ds = _load_dataset(args.data)
    try:
        eta = args.eta if args.eta == "auto" else float(args.eta)
        config = BcdConfig(eta=eta, tau=args.tau, max_iters=args.max_iters, tol_stationarity=args.tol,
                           w_update=args.w_update, seed=0 if args.seed is None else args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    graphical = ds.y is None
    if graphical:
        loss = GaussianGraphicalLoss(ds.sample_covariance)
        init = None
    else:
        loss = LeastSquaresLoss(ds.X, ds.y)
        init = np.linalg.lstsq(ds.X, ds.y, rcond=None)[0] if args.init == "minnorm" else None
    try:
        if args.method == "trimmed":
            problem = TrimmedProblem(loss, args.lam, args.h)
            theta, w, trace = solve_bcd(problem, init, config)
        elif args.method == "dc":
            if graphical:
                raise UsageError("the DC solver supports regression data only")
            theta, trace = solve_dc_trimmed(loss, args.h, args.lam, init, config)
        else:
            spec = {"lasso": lambda: PenaltySpec.l1(args.lam),
                    "scad": lambda: PenaltySpec.scad(args.lam, args.scad_a),
                    "mcp": lambda: PenaltySpec.mcp(args.lam, args.mcp_gamma)}[args.method]()
            theta, trace = solve_prox_gradient(loss, spec, init, config)
    except ValueError as exc:
        if isinstance(exc, NotPositiveDefinite):
            raise
        raise UsageError(str(exc)) from None
    result = dict(method=trace.method, lam=args.lam, h=args.h, status=trace.status, iters=trace.iters,
                  objective=trace.final_objective, final_T=trace.final_T, theta=np.asarray(theta).tolist())
    if args.trace:
        result["trace"] = [dict(zip(TRACE_COLUMNS, (trace.method, args.lam) + row)) for row in trace.rows()]
    print(json.dumps(result))
    return EXIT_OK


def cmd_diag(args):
    if (args.data is None) == (args.population is None):
        raise UsageError("give exactly one of --data or --population")
    try:
        if args.data:
            ds = _load_dataset(args.data)
            if ds.y is None:
                raise UsageError("incoherence diagnostics need a regression dataset")
            report = incoherence_diagnostics(ds.X, ds.support, args.h, args.num_samples,
                                             0 if args.seed is None else args.seed)
        else:
            if args.population == "M2":
                theta = 0.7 if args.theta_cov is None else args.theta_cov
                Gamma = m2_covariance(args.p, theta)
            else:
                theta = 0.3 if args.theta_cov is None else args.theta_cov
                Gamma = m1_covariance(args.p, args.k, theta)
            report = incoherence_diagnostics(Gamma, range(args.k), args.h, args.num_samples,
                                             0 if args.seed is None else args.seed, gram=True)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "gen": cmd_gen, "exp": cmd_exp, "diag": cmd_diag}


def main(argv=None):
    """Run the CLI and return its exit status."""
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())
