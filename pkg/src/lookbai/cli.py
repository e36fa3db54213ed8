"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 too many failed trials,
3 a ``verify`` assertion did not hold.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex
from . import instances

EXIT_OK, EXIT_INVALID, EXIT_TRIALS, EXIT_VERIFY = 0, 1, 2, 3

EXPERIMENT_COMMANDS = {
    "bai": "bai",
    "sparse-bai": "sparse-bai",
    "regret": "regret",
    "sd-demo": "sd-demo",
    "lb-error": "lb-error",
    "sketch-bench": "sketch-bench",
}
VERIFY_TARGETS = {"lemma1": "lemma1", "orthogonality": "orthogonality", "claim4": "lb-claim4",
                  "sparsity": "sparsity"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _param_pairs(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ex.ConfigError(f"--param expects key=value, got {item!r}")
        out[key] = _parse_value(val)
    return out


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--trials", type=int, default=None, help="number of trials")
    p.add_argument("--out", default=None, help="output file (stdout if omitted)")
    p.add_argument("--format", choices=ex.FORMATS, default=None)
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="algorithm parameter, value parsed as JSON when possible; repeatable")
    p.add_argument("--max-failure-rate", type=float, default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="lookbai", description="Lookahead best-arm identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate an instance file")
    g.add_argument("generator", choices=sorted(instances.GENERATORS))
    g.add_argument("--params", default="{}", help="generator parameters as a JSON object")
    g.add_argument("--embed", action="store_true", help="store the reward table instead of the generator")

    for name in EXPERIMENT_COMMANDS:
        e = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        if name in ex.DEFAULT_INSTANCES:
            e.add_argument("--instance", default=None, help="instance JSON file")
            e.add_argument("--generator", default=None, help="generator name for a fresh instance")
            e.add_argument("--gen-params", default=None, help="generator parameters as a JSON object")

    v = sub.add_parser("verify", parents=[common], help="run an exact check and assert it")
    v.add_argument("target", choices=sorted(VERIFY_TARGETS))
    return parser


def _config(args, kind: str) -> ex.ExperimentConfig:
    overrides = {"seed": args.seed, "trials": args.trials, "out": args.out, "format": args.format,
                 "max_failure_rate": args.max_failure_rate}
    params = _param_pairs(args.param)
    if args.config:
        cfg = ex.load_config(args.config, **overrides)
        if cfg.kind != kind:
            raise ex.ConfigError(f"config kind {cfg.kind!r} does not match command {kind!r}")
        cfg.params = {**cfg.params, **params}
    else:
        cfg = ex.ExperimentConfig(kind, params=params, **{k: v for k, v in overrides.items() if v is not None})
    instance = getattr(args, "instance", None)
    generator = getattr(args, "generator", None)
    if instance:
        cfg.instance = {"path": instance}
    elif generator:
        cfg.instance = {"name": generator, "params": json.loads(args.gen_params or "{}")}
    cfg.validate()
    return cfg


def _verify_failures(target: str, result: ex.ExperimentResult) -> list[str]:
    bad = []
    for r in result.ok_records():
        if target == "lemma1" and not r["within_bound"]:
            bad.append(f"trial {r['trial']}: gap {r['gap']} above bound {r['bound']}")
        elif target == "orthogonality" and r["max_abs_diff"] > 1e-10:
            bad.append(f"trial {r['trial']}: |lhs - rhs| = {r['max_abs_diff']}")
        elif target == "claim4" and not r["holds"]:
            bad.append(f"d={r['d']}: {r['value_exact']} below {r['bound']}")
        elif target == "sparsity" and not r["within_bound"]:
            bad.append(f"trial {r['trial']}: phi {r['phi']} above {r['bound']}")
    return bad


def _emit(result: ex.ExperimentResult, cfg: ex.ExperimentConfig) -> None:
    if cfg.out is not None:
        ex.write_result(result, cfg.out, cfg.format)
        return
    if cfg.format == "json":
        sys.stdout.write(ex.result_json(result))
    else:
        sys.stdout.write(ex.records_csv(result))
        sys.stdout.write(ex.summary_csv(result))


def _gen(args) -> int:
    params = json.loads(args.params)
    inst = instances.generate(args.generator, params, args.seed or 0)
    doc = json.dumps(instances.instance_to_dict(inst, embed=args.embed)) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(doc)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return _gen(args)
        kind = VERIFY_TARGETS[args.target] if args.command == "verify" else EXPERIMENT_COMMANDS[args.command]
        cfg = _config(args, kind)
        result = ex.run_experiment(cfg, write=False)
    except (ex.ConfigError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _emit(result, cfg)
    if not result.records:
        print("error: summary refused: no trials were run", file=sys.stderr)
        return EXIT_INVALID
    if ex.failure_rate_exceeded(result):
        first = next(r for r in result.records if r["status"] == "error")
        print(f"error: {result.failures}/{len(result.records)} trials failed; first: {first['error_message']}",
              file=sys.stderr)
        return EXIT_TRIALS
    if args.command == "verify":
        bad = _verify_failures(args.target, result)
        if bad:
            print("verify failed:\n  " + "\n  ".join(bad[:10]), file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
