"""Command-line entry points: train, eval, sweep, check.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 check
suite failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback

import numpy as np

from . import checks
from .config import (EVAL_STEP_COLUMNS, EVAL_SUMMARY_COLUMNS, SWEEP_COLUMNS,
                     CsvWriter, RunConfig, eval_step_row, load_run_config,
                     write_resolved_config)
from .env import HopperEnv
from .learn import Agent, evaluate, load_checkpoint, save_checkpoint, train
from .learn import replace_seed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


def _load(config_path: str) -> tuple[RunConfig, "ModelAssets"]:
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"config file not found: {config_path}")
    cfg = load_run_config(config_path)
    assets = cfg.load_assets(base_dir=os.path.dirname(os.path.abspath(config_path)))
    return cfg, assets


def _env_kwargs(assets) -> dict:
    kwargs = {"model": assets.model, "envelopes": assets.envelopes,
              "gains": assets.gains}
    if assets.reference is not None:
        kwargs["reference"] = assets.reference
    return kwargs


def cmd_train(args) -> int:
    try:
        cfg, assets = _load(args.config)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    write_resolved_config(cfg, out_dir, assets)

    def progress(it, row):
        if it % 10 == 0:
            print(f"iter {it:5d}  return_motion {row['mean_return_motion']:9.2f}  "
                  f"aerial_cav {row['rollout_aerial_cav_raw']:7.3f}  "
                  f"ep_len {row['mean_ep_len']:5.1f}", flush=True)

    try:
        result = train(cfg.learn, cfg.env, assets.model, assets.envelopes,
                       assets.gains, out_dir, cfg.seed,
                       on_iteration=progress if not args.quiet else None)
    except Exception as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME
    best = max(e["net_pitch_deg"] for e in result["final_eval"])
    print(f"done: metrics at {result['metrics_path']}; "
          f"best eval net rotation {best:.1f} deg")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cfg, assets = _load(args.config)
        if not os.path.exists(args.ckpt):
            raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    agent = Agent(cfg.learn, np.random.default_rng(cfg.seed))
    try:
        load_checkpoint(agent, args.ckpt)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    write_resolved_config(cfg, out_dir, assets)
    env = HopperEnv(replace_seed(cfg.env.nominal(), cfg.seed), **_env_kwargs(assets))
    try:
        episodes = evaluate(agent, env, episodes=args.episodes, keep_steps=True)
    except Exception as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME

    steps_path = os.path.join(out_dir, "eval_steps.csv")
    summary_path = os.path.join(out_dir, "eval_summary.csv")
    with CsvWriter(steps_path, EVAL_STEP_COLUMNS, cfg.seed) as sw, \
            CsvWriter(summary_path, EVAL_SUMMARY_COLUMNS, cfg.seed) as mw:
        for ep, summary in enumerate(episodes):
            rate_integral = 0.0
            for row in summary["rows"]:
                sw.write(eval_step_row(ep, row["info"], row["reward"]))
                rate_integral += row["info"]["base_pitch_rate"] * env.config.dt_control
            mw.write({
                "episode": ep, "steps": summary["steps"],
                "net_pitch_deg": summary["net_pitch_deg"],
                "pitch_rate_integral_deg": np.degrees(rate_integral),
                "peak_cav": summary["peak_cav"],
                "max_flight_s": summary["max_flight_s"],
                "peak_tau_load": summary["peak_tau_load"],
                "return_motion": summary["return_motion"],
                "return_barrier": summary["return_barrier"],
            })
    for ep, summary in enumerate(episodes):
        print(f"episode {ep}: net rotation {summary['net_pitch_deg']:8.1f} deg, "
              f"peak CAV {summary['peak_cav']:6.2f} rad/s, "
              f"flight {summary['max_flight_s']:.2f} s")
    print(f"wrote {steps_path} and {summary_path}")
    return EXIT_OK


SWEEP_AXES = ("reward-mode", "mor", "load-reg")


def _sweep_cells(axis: str):
    """(variant_train, env overrides for training, [(variant_eval, eval overrides)])."""
    if axis == "reward-mode":
        return [(mode, {"aerial_reward_mode": mode}, [(mode, {})])
                for mode in ("cav", "cam", "bav")]
    if axis == "mor":
        return [
            ("mor-on", {"use_mor": True},
             [("clip-on", {}), ("clip-off", {"use_mor": False})]),
            ("mor-off", {"use_mor": False},
             [("clip-off", {}), ("clip-on", {"use_mor": True})]),
        ]
    return [
        ("load-reg-on", {"use_load_reg": True}, [("load-reg-on", {})]),
        ("load-reg-off", {"use_load_reg": False}, [("load-reg-off", {})]),
    ]


def cmd_sweep(args) -> int:
    try:
        cfg, assets = _load(args.config)
        if args.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis: {args.axis}")
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = cfg.resolved_output_dir()
    os.makedirs(root, exist_ok=True)
    write_resolved_config(cfg, root, assets)
    summary_path = os.path.join(root, f"sweep_{args.axis}.csv")
    failures = 0
    with CsvWriter(summary_path, SWEEP_COLUMNS, cfg.seed) as writer:
        for k in range(args.seeds):
            seed = cfg.seed + k
            for variant, train_over, evals in _sweep_cells(args.axis):
                cell_dir = os.path.join(root, f"{variant}_seed{seed}")
                env_cfg = dataclasses.replace(cfg.env, seed=seed, **train_over)
                try:
                    print(f"[sweep] training {variant} seed {seed}", flush=True)
                    result = train(cfg.learn, env_cfg, assets.model, assets.envelopes,
                                   assets.gains, cell_dir, seed)
                except Exception as exc:
                    failures += 1
                    print(f"[sweep] cell {variant} seed {seed} failed: {exc}",
                          file=sys.stderr)
                    writer.write({"axis": args.axis, "variant_train": variant,
                                  "variant_eval": "", "status": "aborted",
                                  "episodes": 0})
                    continue
                agent = result["agent"]
                for variant_eval, eval_over in evals:
                    eval_cfg = dataclasses.replace(
                        cfg.env.nominal(), seed=seed + 7919, **eval_over)
                    env = HopperEnv(eval_cfg, **_env_kwargs(assets))
                    eps = evaluate(agent, env, episodes=args.episodes)
                    writer.write({
                        "axis": args.axis, "variant_train": variant,
                        "variant_eval": variant_eval, "status": "ok",
                        "episodes": len(eps),
                        "return_motion": float(np.mean([e["return_motion"] for e in eps])),
                        "return_barrier": float(np.mean([e["return_barrier"] for e in eps])),
                        "net_pitch_deg": float(np.mean([e["net_pitch_deg"] for e in eps])),
                        "peak_cav": float(np.max([e["peak_cav"] for e in eps])),
                        "max_flight_s": float(np.max([e["max_flight_s"] for e in eps])),
                        "peak_tau_load": float(np.max([e["peak_tau_load"] for e in eps])),
                    })
    print(f"wrote {summary_path}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_check(_args) -> int:
    ok = checks.run_all()
    print("all checks passed" if ok else "CHECK FAILURES PRESENT")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopperflip",
        description="One-leg hopper front-flip sandbox: training, evaluation, "
                    "ablation sweeps, and built-in verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy from a run config")
    p_train.add_argument("--config", required=True, help="run config JSON path")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="roll out a checkpoint and export CSVs")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--episodes", type=int, default=1)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train/evaluate an ablation grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--seeds", type=int, default=1)
    p_sweep.add_argument("--episodes", type=int, default=3)
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="run the built-in verification suites")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
