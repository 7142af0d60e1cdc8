"""Command-line entry point: ``bridger <subcommand> [options]``.

Exit codes: 0 success, 1 a training/sampling divergence (or theory
violation), 2 a configuration or usage error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import theory
from .baselines import DdimPolicy, ResidualPolicy
from .core import NOISE_MODES, VELOCITY_MODES, BridgerPolicy
from .exceptions import ConfigError, DivergenceError
from .metrics import emd, roughness
from .numeric import load_checkpoint
from .sources import make_source
from .sweep import load_config, read_csv, relative_improvement_csv, report_relative_improvement, run_sweep
from .tasks import CANONICAL_TASKS, gen_data, get_task, read_jsonl, write_jsonl

EXIT_OK, EXIT_DIVERGENCE, EXIT_CONFIG = 0, 1, 2
DEFAULT_OUT = "out"
ESTIMATORS = {"bridger": BridgerPolicy, "ddpm": DdimPolicy, "ddim": DdimPolicy, "residual": ResidualPolicy}


def _out(args, name):
    out = args.out or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _print(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_gen_data(args):
    tasks = [args.task] if args.task else []
    if args.config:
        tasks = [load_config(args.config).task]
    if not tasks:
        raise ConfigError("gen-data needs --task or --config")
    for task in tasks:
        task = get_task(task)
        if args.n:
            task = type(task)(task.name, task.generator, task.params, task.obs_mode, args.n)
        path = _out(args, f"{task.name}-seed{args.seed}.jsonl")
        _, _, stats = gen_data(task, args.seed, path)
        _print({"path": path, **stats})
    return EXIT_OK


def _load_data(args):
    if args.data:
        return read_jsonl(args.data)
    task = get_task(args.task)
    X, A, _ = gen_data(task, args.seed)
    return X, A


def cmd_train(args):
    X, A = _load_data(args)
    source = make_source(args.source, **json.loads(args.source_params)) if args.source else None
    seed = args.seed
    if args.method == "bridger":
        est = BridgerPolicy(source=source, interpolant=args.interpolant, gamma_scale=args.gamma_scale,
                            epsilon_scale=args.epsilon_scale, epochs=args.epochs, n_steps=args.steps,
                            velocity_mode=args.velocity_mode, noise_mode=args.noise_mode, random_state=seed)
    elif args.method == "ddim":
        est = DdimPolicy(epochs=args.epochs, n_steps=args.steps, random_state=seed)
    else:
        est = ResidualPolicy(source=source, epochs=args.epochs, random_state=seed)
    est.fit(X, A)
    path = _out(args, f"{args.method}-seed{seed}.json")
    est.save(path)
    _print({"checkpoint": path, "method": args.method, "n": int(A.shape[0])})
    return EXIT_OK


def _load_estimator(path):
    method = load_checkpoint(path)["method"]
    return ESTIMATORS[method].load(path)


def cmd_sample(args):
    est = _load_estimator(args.checkpoint)
    kwargs = {"n": args.n, "random_state": args.seed}
    if isinstance(est, BridgerPolicy):
        kwargs.update(n_steps=args.steps, velocity_mode=args.velocity_mode, noise_mode=args.noise_mode)
    elif isinstance(est, DdimPolicy):
        kwargs.update(n_steps=args.steps)
    A = est.sample(**kwargs)
    path = _out(args, f"samples-seed{args.seed}.jsonl")
    write_jsonl(path, np.zeros((A.shape[0], 0)), A)
    _print({"samples": path, "n": int(A.shape[0])})
    return EXIT_OK


def cmd_eval(args):
    _, A = read_jsonl(args.samples)
    result = {"n_samples": int(A.shape[0])}
    if args.reference:
        _, B = read_jsonl(args.reference)
        n = min(A.shape[0], B.shape[0])
        result["emd"] = emd(A[:n], B[:n], random_state=args.seed)
    if args.roughness:
        result["roughness"] = float(np.mean([roughness(a) for a in A]))
    _print(result)
    return EXIT_OK


def cmd_sweep(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    out = args.out or DEFAULT_OUT
    record = run_sweep(config, out, log=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    _print({"config_hash": record.config_hash, "rows": len(record.rows), "divergences": len(record.divergences),
            "csv": os.path.join(out, "metrics.csv"), "wall_clock": round(record.wall_clock, 3)})
    return EXIT_DIVERGENCE if record.divergences else EXIT_OK


def cmd_theory_check(args):
    report = theory.run_theory_check(args.instances, args.support_max, args.steps_max, args.seed)
    text = json.dumps(report, sort_keys=True)
    if args.out:
        with open(_out(args, "theory_check.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_DIVERGENCE if report["violations"] else EXIT_OK


def cmd_report(args):
    rows = read_csv(args.csv)
    text = relative_improvement_csv(report_relative_improvement(rows))
    if args.out:
        with open(_out(args, "relative_improvement.csv"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser():
    def global_flags(suppress):
        # subcommands accept the global flags too; SUPPRESS keeps them from
        # overwriting values given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p = _Parser(add_help=False)
        p.add_argument("--config", metavar="PATH", help="TOML experiment config", **kw)
        p.add_argument("--seed", type=int, metavar="N", help="random seed", **kw)
        p.add_argument("--out", metavar="DIR", help=f"output directory (default {DEFAULT_OUT!r})", **kw)
        p.add_argument("-v", "--verbose", action="store_true", **kw)
        return p

    common = global_flags(suppress=True)
    parser = _Parser(prog="bridger", description="Policy diffusion from informative source policies.",
                     parents=[global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "write a synthetic task dataset as JSONL")
    p.add_argument("--task", choices=sorted(CANONICAL_TASKS))
    p.add_argument("--n", type=int, default=None)

    def sampler_flags(p):
        p.add_argument("--steps", type=int, default=20, metavar="K")
        p.add_argument("--velocity-mode", choices=VELOCITY_MODES, default="decomposed")
        p.add_argument("--noise-mode", choices=NOISE_MODES, default="euler_maruyama")

    p = add("train", cmd_train, "fit one policy and write a checkpoint")
    p.add_argument("--method", choices=("bridger", "ddim", "residual"), default="bridger")
    p.add_argument("--data", metavar="JSONL")
    p.add_argument("--task", choices=sorted(CANONICAL_TASKS), default="two-cluster")
    p.add_argument("--source", default=None, help="gaussian | mixture | ring | cvae")
    p.add_argument("--source-params", default="{}", help="JSON keyword arguments for the source")
    p.add_argument("--interpolant", choices=("linear", "power3"), default="power3")
    p.add_argument("--gamma-scale", type=float, default=0.3)
    p.add_argument("--epsilon-scale", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=300)
    sampler_flags(p)

    p = add("sample", cmd_sample, "draw actions from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    sampler_flags(p)

    p = add("eval", cmd_eval, "EMD / roughness of a sample file")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference")
    p.add_argument("--roughness", action="store_true")

    add("sweep", cmd_sweep, "run an experiment config (requires --config)")

    p = add("theory-check", cmd_theory_check, "fuzz the improvement bounds on finite supports")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--support-max", type=int, default=10)
    p.add_argument("--steps-max", type=int, default=20)

    p = add("report", cmd_report, "relative-improvement table from a metrics CSV")
    p.add_argument("--csv", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep" and not args.config:
        parser.error("sweep requires --config PATH")
    if args.seed is None and args.command != "sweep":
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
