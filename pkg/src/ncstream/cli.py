"""Command line entry point: ``ncstream {tracegen,train,eval,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import agent, runner, tracegen
from .config import ConfigError, load_config

log = logging.getLogger("ncstream")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--traces", help="trace directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _config(args, **extra):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for key in ("traces", "out", "seed", "algo", "qoe"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    if getattr(args, "loss_set", None):
        overrides["loss_set"] = args.loss_set
    overrides.update({k: str(v) for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def cmd_tracegen(args) -> int:
    cfg = _config(args, count=args.count, duration=args.duration)
    out = Path(args.out or cfg.traces)
    paths = tracegen.generate(cfg.count, cfg.duration, out, seed=cfg.seed, mean_dwell=cfg.mean_dwell)
    print(f"wrote {len(paths)} traces to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.algo not in runner.RL_ALGOS:
        raise runner.UnknownAlgo(f"--algo must be one of {runner.RL_ALGOS} for training")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"{cfg.algo}.ckpt"

    def progress(row):
        if row["epoch"] % 50 == 0:
            log.info("epoch %d reward %.3f entropy %.3f", row["epoch"], row["mean_reward"], row["mean_entropy"])

    res = runner.train_agent(cfg, progress=progress)
    agent.save_checkpoint(res.params, ckpt, meta={"algo": cfg.algo, "epochs": cfg.epochs, "seed": cfg.seed})
    curve = out / f"{cfg.algo}_curve.csv"
    runner.write_csv(curve, ["epoch", "mean_reward", "mean_entropy"], res.curve)
    print(f"checkpoint {ckpt}\ncurve {curve}")
    return 0


def _load_params(algo, path):
    if algo not in runner.RL_ALGOS:
        return None
    if not path or not Path(path).exists():
        raise runner.MissingCheckpoint(f"{algo} needs --checkpoint")
    params, meta = agent.load_checkpoint(path)
    if meta.get("algo") not in (None, algo):
        log.warning("checkpoint was trained as %s, evaluating as %s", meta["algo"], algo)
    return params


def _variants(spec: str):
    return runner.VARIANTS if spec == "all" else (int(spec),)


def cmd_eval(args) -> int:
    cfg = _config(args)
    if cfg.algo not in runner.ALGOS:
        raise runner.UnknownAlgo(cfg.algo)
    params = _load_params(cfg.algo, args.checkpoint)
    res = runner.evaluate(cfg, cfg.algo, params)
    variants = _variants(cfg.qoe)
    runner.write_eval(res, cfg.out, variants)
    means = " ".join(f"qoe{v}={res.mean(v):.4f}" for v in variants)
    print(f"{cfg.algo} traces={len(res.trace_rows)} {means} mean_bitrate={res.mean_bitrate():.1f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in runner.ALGOS:
            raise runner.UnknownAlgo(a)
    checkpoints = {}
    for item in args.checkpoint or []:
        name, _, path = item.partition("=")
        checkpoints[name] = path
    rows, results = runner.compare(cfg, algos, checkpoints, args.reference, _variants(cfg.qoe))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for res in results.values():
        runner.write_eval(res, out, _variants(cfg.qoe))
    path = out / "compare.csv"
    runner.write_csv(path, ["algo", "variant", "mean_qoe", "mean_bitrate_kbps", "relative_gain"], rows)
    for r in rows:
        print(f"{r['algo']:<10} {r['variant']} mean={r['mean_qoe']:.4f} gain={r['relative_gain']:+.2%}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncstream", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tracegen", help="write synthetic bandwidth traces")
    _common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--duration", type=int, help="seconds per trace")
    p.set_defaults(func=cmd_tracegen)

    p = sub.add_parser("train", help="train an RL agent (nancy or pensieve)")
    _common(p)
    p.add_argument("--algo", choices=runner.RL_ALGOS)
    p.add_argument("--checkpoint", help="checkpoint path to write")
    p.add_argument("--loss-set", help="comma separated loss ratios")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one algorithm")
    _common(p)
    p.add_argument("--algo")
    p.add_argument("--checkpoint")
    p.add_argument("--qoe", choices=["1", "2", "3", "all"])
    p.add_argument("--loss-set", help="comma separated loss ratios")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired evaluation of several algorithms")
    _common(p)
    p.add_argument("--algos", required=True, help="comma separated, first is the reference")
    p.add_argument("--checkpoint", action="append", metavar="ALGO=PATH")
    p.add_argument("--reference")
    p.add_argument("--qoe", choices=["1", "2", "3", "all"])
    p.add_argument("--loss-set", help="comma separated loss ratios")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, runner.UnknownAlgo, runner.MissingCheckpoint, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
