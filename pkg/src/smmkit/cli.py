"""Command-line interface: ``smmkit <subcommand> ...``.

Every subcommand that writes into an output location also writes
``<out>.config.json`` (or ``config.json`` inside an output directory) with the
argument vector; ``smmkit rerun <config>`` replays it.

Exit codes: 0 success, 2 invalid input, 3 numerical abort, 4 partial
experiment failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path


from . import io
from .estimators import SafeProposalSpec, delta_is, replicate, safe_delta_is, uis
from .exceptions import (
    BoundsTooTightError,
    DegenerateConditioningError,
    InputError,
    InsufficientAcceptanceError,
    InvalidModelError,
    NoAcceptanceError,
    SmmError,
    TrainingAbortedError,
    UnsupportedTargetError,
)
from .experiments import run_spec
from .metrics import estimate_elbo, estimate_fkl, estimate_rkl
from .mixture import AdditiveMixture, ComplexSmm
from .rng import RngState
from .samplers import (
    ARITS_BOUNDS,
    ARITS_EPS,
    ancestral_sample,
    arits_sample,
    rejection_sample,
    rejection_sample_exact_n,
    stratified_sample,
)
from .targets import CATALOG, gmm_target, load_blr_csv, make_catalog_target, smm_target
from .vi import ParamVector, TrainConfig, init_params, train

logger = logging.getLogger("smmkit")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
_NUMERIC_ERRORS = (TrainingAbortedError, DegenerateConditioningError, BoundsTooTightError,
                   InsufficientAcceptanceError, NoAcceptanceError)


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _echo(path, argv):
    io.write_json(path, {"schema_version": io.SCHEMA_VERSION, "argv": list(argv)})


def _load_target(spec, log_scale=0.0):
    """Catalog name, ``blr:<csv>`` or a model file path."""
    if spec in CATALOG:
        target = make_catalog_target(spec)
    elif spec.startswith("blr:"):
        target = load_blr_csv(spec[4:])
    elif Path(spec).is_file():
        model = io.load_model(spec)
        target = gmm_target(spec, model) if isinstance(model, AdditiveMixture) else smm_target(spec, model)
    else:
        raise CliError(f"unknown target {spec!r}: not a catalog name ({', '.join(sorted(CATALOG))}), "
                       "blr:<csv>, or model file")
    return target.scaled(log_scale) if log_scale else target


# -- subcommands --------------------------------------------------------------

def cmd_model(args, argv):
    if args.action == "inspect":
        model = io.load_model(args.path)
        if isinstance(model, AdditiveMixture):
            info = {"kind": "additive", "K": model.n_components, "D": model.dim}
        else:
            sm = model.expansion
            info = {"kind": "squared", "K": model.n_components, "D": model.dim, "Z": model.Z,
                    "Z_plus": sm.Z_plus, "Z_minus": sm.Z_minus, "acceptance_rate": sm.acceptance_rate,
                    "n_pairs": sm.n_components, "n_negative": int((sm.signs < 0).sum())}
        print(json.dumps(info, indent=2))
        return EXIT_OK
    # construct
    if args.target:
        target = make_catalog_target(args.target)
        if target.model is None:
            raise CliError(f"target {args.target!r} is not a mixture")
        model = target.model
    else:
        kind = "gmm" if args.gmm else "squared"
        model = init_params(kind, args.K, args.D, RngState(args.seed).generator()).to_model()
    io.save_model(model, args.path)
    return EXIT_OK


def cmd_sample(args, argv):
    model = io.load_model(args.model)
    rng = RngState(args.seed)
    meta = {}
    if args.method in ("ancestral", "stratified"):
        if isinstance(model, ComplexSmm):
            if args.part is None:
                raise CliError("squared mixtures are not latent-variable models and admit no ancestral "
                               "sampling; use --method arits/rejection, or --part plus/minus to sample "
                               "the positive or negative expanded part")
            mix = model.expansion.q_plus if args.part == "plus" else model.expansion.q_minus
            if mix is None:
                raise CliError(f"the model has no {args.part} part")
        else:
            mix = model
        sampler = ancestral_sample if args.method == "ancestral" else stratified_sample
        batch = sampler(mix, args.s, rng)
        meta["component"] = batch.component
    else:
        if not isinstance(model, ComplexSmm):
            raise CliError(f"--method {args.method} needs a squared mixture model")
        if args.method == "arits":
            batch = arits_sample(model, args.s, args.lower, args.upper, args.eps, rng)
        else:
            batch = rejection_sample(model, args.s, rng)
            print(f"accepted {len(batch)} of {batch.n_proposed} proposals", file=sys.stderr)
    io.write_points(args.out, batch.points, meta)
    _echo(str(args.out) + ".config.json", argv)
    return EXIT_OK


def _train_config(args):
    doc = io.load_config(args.config) if args.config else {}
    valid = set(TrainConfig.__dataclass_fields__)
    unknown = set(doc) - valid
    if unknown:
        raise CliError(f"unknown training config keys: {sorted(unknown)}")
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        return TrainConfig(**doc)
    except (TypeError, ValueError) as err:
        raise CliError(f"invalid training config: {err}") from None


def cmd_train(args, argv):
    cfg = _train_config(args)
    target = _load_target(args.target)
    if args.init and Path(args.init).is_file():
        params = ParamVector.from_model(io.load_model(args.init))
    else:
        kind = "gmm" if cfg.objective == "selbo_gmm" else "squared"
        params = init_params(kind, args.K, target.dim, RngState(cfg.seed).child(0).generator())
    if params.means.shape[1] != target.dim:
        raise CliError(f"model dimension {params.means.shape[1]} != target dimension {target.dim}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out / "config.json", argv)
    io.write_json(out / "train_config.json", cfg.to_dict())
    result = train(params, target, cfg, RngState(cfg.seed).child(1))
    # wallclock lives apart from the trace so reruns give a byte-identical trace.csv
    io.write_csv(out / "trace.csv", [{"step": s, "loss": l} for s, l, _ in result.trace], ["step", "loss"])
    io.write_csv(out / "timing.csv", [{"step": s, "wallclock": w} for s, _, w in result.trace],
                 ["step", "wallclock"])
    io.save_model(result.model, out / "model.json")
    io.write_json(out / "flags.json", {"flags": result.flags, "stopped_at": result.stopped_at,
                                       "selected_step": result.selected_step})
    print(f"stopped at step {result.stopped_at}; selected checkpoint from step {result.selected_step}")
    return EXIT_OK


def cmd_eval(args, argv):
    target = _load_target(args.target, args.target_log_scale)
    model = io.load_model(args.model)
    rows = []
    for k, name in enumerate(args.metrics.split(",")):
        rng = RngState(args.seed).child(k)
        if name == "fkl":
            rep = estimate_fkl(target, model, args.s, args.reps, rng)
        elif name == "rkl":
            rep = estimate_rkl(target, model, args.s, args.reps, rng, args.route)
        elif name == "elbo":
            rep = estimate_elbo(target, model, args.s, args.reps, rng, args.route)
        else:
            raise CliError(f"unknown metric {name!r}; choose from fkl, rkl, elbo")
        rows.append(rep.as_row())
        print(f"{rep.metric}: {rep.value:.6g} +- {rep.stddev:.3g} (S={rep.S}, reps={rep.reps})")
    if args.out:
        io.write_csv(args.out, rows, ["metric", "value", "S", "reps", "stddev", "flags"])
        _echo(str(args.out) + ".config.json", argv)
    return EXIT_OK


def cmd_estimate(args, argv):
    """Estimate ``int p~`` with the model as proposal."""
    target = _load_target(args.target, args.target_log_scale)
    model = io.load_model(args.model)
    if not isinstance(model, ComplexSmm) and args.method != "uis":
        raise CliError(f"--method {args.method} needs a squared mixture proposal")
    log_p, S = target.log_prob, args.s
    if args.method == "uis":
        def est(g):
            if isinstance(model, AdditiveMixture):
                X = ancestral_sample(model, S, g).points
            else:
                X = rejection_sample_exact_n(model, S, 1000 * S, g).points
            return uis(log_p, X, model.log_density, strict=False)
    elif args.method == "uis_arits":
        est = lambda g: uis(log_p, arits_sample(model, S, rng=g), model.log_density, strict=False)
    elif args.method == "delta_is":
        est = lambda g: delta_is(model, log_p, S, g)
    else:
        spec = SafeProposalSpec(args.beta, args.sigma_safe)
        est = lambda g: safe_delta_is(model, spec, log_p, S, g)
    truth = math.exp(target.exact_log_Z) if target.exact_log_Z is not None else None
    stats = replicate(est, args.reps, RngState(args.seed), truth=truth, n_jobs=args.threads)
    row = {"method": args.method, "S": S}
    row.update(stats.as_row())
    print(json.dumps(row))
    if args.out:
        io.write_csv(args.out, [row], ["method", "S", "R", "mean", "stddev", "error_mean", "error_std", "flags"])
        _echo(str(args.out) + ".config.json", argv)
    return EXIT_OK


def cmd_experiment(args, argv):
    spec = io.load_config(args.spec)
    out = Path(args.out or spec.get("output", "results"))
    spec = dict(spec, output=str(out))
    out.mkdir(parents=True, exist_ok=True)
    _echo(out / "config.json", argv)
    try:
        rows, _ = run_spec(spec, out)
    except (TypeError, ValueError, KeyError) as err:
        raise CliError(f"invalid experiment spec: {err}") from None
    failed = sum(1 for r in rows if r.get("failed") or (isinstance(r.get("error"), float) and math.isnan(r["error"])))
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}" + (f" ({failed} failed)" if failed else ""))
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_rerun(args, argv):
    doc = io.load_config(args.config)
    if "argv" not in doc:
        raise CliError(f"{args.config} is not a config echo")
    return main(doc["argv"])


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="smmkit", description="Sampling, estimation and VI with squared mixtures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("model", help="construct or inspect a model file")
    m.add_argument("action", choices=["construct", "inspect"])
    m.add_argument("path")
    m.add_argument("--target", choices=sorted(CATALOG), help="write the mixture behind a catalog target")
    m.add_argument("--K", type=int, default=2)
    m.add_argument("--D", type=int, default=2)
    m.add_argument("--gmm", action="store_true", help="random additive mixture instead of a squared one")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_model)

    s = sub.add_parser("sample", help="draw samples from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--method", required=True, choices=["ancestral", "stratified", "arits", "rejection"])
    s.add_argument("--s", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--part", choices=["plus", "minus"])
    s.add_argument("--lower", type=float, default=ARITS_BOUNDS[0])
    s.add_argument("--upper", type=float, default=ARITS_BOUNDS[1])
    s.add_argument("--eps", type=float, default=ARITS_EPS)
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("train", help="fit a model to a target")
    t.add_argument("--target", required=True, help="catalog name, blr:<csv>, or model file")
    t.add_argument("--init", help="initial model file (default: random init)")
    t.add_argument("--K", type=int, default=2)
    t.add_argument("--config", help="JSON file with training config keys")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="divergences between a model and a target")
    e.add_argument("--target", required=True)
    e.add_argument("--target-log-scale", type=float, default=0.0)
    e.add_argument("--model", required=True)
    e.add_argument("--metrics", default="fkl,rkl,elbo")
    e.add_argument("--s", type=int, default=10_000)
    e.add_argument("--reps", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--route", choices=["rejection", "arits"], default="rejection")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("estimate", help="estimate the target's normalizing constant with a model proposal")
    x.add_argument("--target", required=True)
    x.add_argument("--target-log-scale", type=float, default=0.0)
    x.add_argument("--model", required=True)
    x.add_argument("--method", choices=["uis", "uis_arits", "delta_is", "safe_delta_is"], default="delta_is")
    x.add_argument("--s", type=int, default=10_000)
    x.add_argument("--reps", type=int, default=30)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--beta", type=float, default=0.0)
    x.add_argument("--sigma-safe", type=float, default=3.0)
    x.add_argument("--threads", type=int, default=1)
    x.add_argument("--out")
    x.set_defaults(func=cmd_estimate)

    r = sub.add_parser("experiment", help="run an experiment spec")
    r.add_argument("spec")
    r.add_argument("--out")
    r.set_defaults(func=cmd_experiment)

    rr = sub.add_parser("rerun", help="replay a config echo")
    rr.add_argument("config")
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except _NUMERIC_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, InvalidModelError, UnsupportedTargetError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SmmError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
