"""Training orchestration and CLI."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import TrainerConfig, toy_profile
from .env import make_env
from .export import write_manifest, write_weight_file
from .nets import SquashedGaussianActor


def train(env, cfg: TrainerConfig, outdir: Path, progress=print):
    """Run the configured algorithm; write the training curve, the best
    actor in the portable format, and a manifest. Returns the result."""
    if cfg.algorithm == "tqc":
        from .tqc import train_tqc as run
    else:
        from .ppo import train_ppo as run

    def on_eval(row):
        if progress is not None:
            progress(
                f"step {row['step']}: median fidelity "
                f"{row['median_final_fidelity']:.4f}, median return "
                f"{row['median_return']:.3f}"
            )

    result = run(env, cfg, progress=on_eval)

    outdir.mkdir(parents=True, exist_ok=True)
    if result.curve:
        with open(outdir / "training_curve.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(result.curve[0].keys()),
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(result.curve)

    best = result.actor
    if result.best_actor_state:
        best = SquashedGaussianActor(
            env.observation_space.size,
            env.action_space.size,
            cfg.actor_width if cfg.algorithm == "tqc" else cfg.ppo_width,
            cfg.n_layers,
        )
        best.load_state_dict(result.best_actor_state)
    weight_path = outdir / "actor.cfpw"
    write_weight_file(best.export_layers(), env.action_space.size, weight_path)
    write_manifest(
        outdir / "actor.manifest.json",
        cfg.to_manifest(),
        env.spec_message,
        {"best_median_final_fidelity": result.best_median_fidelity},
    )
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavity-trainer", description="Train displacement policies over the bridge"
    )
    parser.add_argument("--algorithm", choices=("tqc", "ppo"), default="tqc")
    parser.add_argument("--env-config", help="environment JSON config (spawns a stdio server)")
    parser.add_argument("--host", help="connect to a running TCP bridge instead")
    parser.add_argument("--port", type=int)
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    parser.add_argument(
        "--toy", action="store_true",
        help="down-sized networks/batch for desk-scale runs",
    )
    parser.add_argument(
        "--noisy-training", action="store_true",
        help="keep the environment's noise model during training",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.toy:
        cfg = toy_profile(args.algorithm, total_steps=args.steps, seed=args.seed)
    else:
        cfg = TrainerConfig(algorithm=args.algorithm, total_steps=args.steps, seed=args.seed)
    env = make_env(
        env_config_path=args.env_config,
        host=args.host,
        port=args.port,
        noisy_training=args.noisy_training,
    )
    try:
        result = train(env, cfg, Path(args.out))
    finally:
        env.close()
    print(
        json.dumps(
            {
                "best_median_final_fidelity": result.best_median_fidelity,
                "evaluations": len(result.curve),
            }
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
