"""Command-line front end: episodes, trees, sweeps, calibration, serving.

Every command takes a JSON config (see config.py), dotted --set overrides,
and writes deterministic CSV/JSON artifacts plus a reproducibility manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    distribution_stats,
    enumerate_tree,
    run_sweep,
    tree_report,
)
from .bridge import BridgeSession, serve_stdio, serve_tcp
from .config import ExperimentConfig, apply_override, load_config, make_preset_target
from .errors import CavityFeedbackError
from .fock import displacement_cache, vacuum
from .lyapunov import build_context
from .qfilter import alpha_guess
from .simulator import LyapunovController, run_batch

FLOAT_FMT = repr


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [FLOAT_FMT(v) if isinstance(v, float) else v for v in row]
            )


def _write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(outdir: Path, cfg: ExperimentConfig, command: str, extra=None) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    _write_json(outdir / "manifest.json", manifest)


def _load_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for override in args.set or []:
        cfg = apply_override(cfg, override)
    if args.seed is not None:
        cfg = apply_override(cfg, f"run.seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        cfg = apply_override(cfg, f"run.workers={args.workers}")
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_and_export(cfg: ExperimentConfig, outdir: Path, command: str, n_traj: int) -> dict:
    episode_cfg = cfg.build_episode_config()
    controller = cfg.build_controller()
    records = run_batch(episode_cfg, controller, n_traj, workers=cfg.workers)
    stats = distribution_stats(records)
    _write_csv(
        outdir / "summary.csv",
        ["cycle", "mean_fidelity", "median_fidelity", "p25_fidelity", "p75_fidelity"],
        zip(
            (int(c) for c in stats.cycles),
            (float(v) for v in stats.mean),
            (float(v) for v in stats.median),
            (float(v) for v in stats.p25),
            (float(v) for v in stats.p75),
        ),
    )
    _write_csv(
        outdir / "final_fidelities.csv",
        ["trajectory", "final_true_fidelity", "final_filter_fidelity", "terminal_status"],
        (
            (i, float(r.final_true_fidelity), float(r.final_filter_fidelity), r.terminal_status)
            for i, r in enumerate(records)
        ),
    )
    _write_json(outdir / "records.json", [r.to_dict() for r in records])
    _write_json(outdir / "summary.json", stats.to_dict())
    _write_manifest(outdir, cfg, command, {"n_traj": n_traj})
    return {
        "final_median": stats.final_median,
        "final_mean": stats.final_mean,
        "n_records": stats.n_records,
    }


def cmd_run(args) -> int:
    cfg = _load_with_overrides(args)
    outdir = _outdir(args)
    n_traj = args.n_traj if args.n_traj is not None else cfg.n_traj
    if cfg.noise_t_cav is not None and not args.full:
        # desk-scale cap for the long noisy stabilization runs; --full restores
        n_traj = min(n_traj, 300)
        if cfg.max_cycles > 500:
            cfg = apply_override(cfg, "episode.max_cycles=500")
    result = _run_and_export(cfg, outdir, "run", n_traj)
    print(
        f"run: {result['n_records']} trajectories, median final fidelity "
        f"{result['final_median']:.4f}, mean {result['final_mean']:.4f}"
    )
    return 0


def cmd_eval_policy(args) -> int:
    cfg = _load_with_overrides(args)
    cfg = apply_override(cfg, "controller.kind=mlp")
    cfg = apply_override(cfg, f'controller.weights="{args.weights}"')
    outdir = _outdir(args)
    n_traj = args.n_traj if args.n_traj is not None else cfg.n_traj
    result = _run_and_export(cfg, outdir, "eval-policy", n_traj)
    print(
        f"eval-policy: {result['n_records']} trajectories, median final fidelity "
        f"{result['final_median']:.4f}"
    )
    return 0


def _initial_state(cfg: ExperimentConfig, spec: str):
    space = cfg.space
    if spec == "guess":
        guess = alpha_guess(cfg.build_target())
        return displacement_cache(space).apply_to_ket(vacuum(space), guess).to_density()
    ket, _ = make_preset_target(spec, space)
    return ket.to_density()


def cmd_tree(args) -> int:
    cfg = _load_with_overrides(args)
    outdir = _outdir(args)
    initial = _initial_state(cfg, args.initial)
    tree = enumerate_tree(
        initial,
        cfg.build_controller(),
        cfg.build_setup(),
        args.depth,
        cfg.build_target(),
    )
    rows = tree_report(tree)
    max_len = max(len(r["fidelities"]) for r in rows)
    header = ["outcomes", "probability", "log10_probability"] + [
        f"fidelity_{k}" for k in range(max_len)
    ]
    _write_csv(
        outdir / "tree.csv",
        header,
        (
            [r["outcomes"], float(r["probability"]), float(r["log10_probability"])]
            + [float(f) for f in r["fidelities"]]
            for r in rows
        ),
    )
    _write_json(
        outdir / "tree.json",
        {
            "depth": tree.depth,
            "pruned_mass": tree.pruned_mass,
            "leaf_probability_sum": tree.leaf_probability_sum(),
            "weighted_mean_final_fidelity": tree.weighted_mean_final_fidelity(),
            "rows": rows,
        },
    )
    _write_manifest(outdir, cfg, "tree", {"depth": args.depth, "initial": args.initial})
    print(
        f"tree: depth {tree.depth}, {len(tree.leaves)} leaves, probability sum "
        f"{tree.leaf_probability_sum():.12f}"
    )
    return 0


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def cmd_sweep(args) -> int:
    cfg = _load_with_overrides(args)
    outdir = _outdir(args)
    ratios = _parse_floats(args.ratios)
    eps_values = _parse_floats(args.eps)
    n_traj = args.n_traj if args.n_traj is not None else min(cfg.n_traj, 100)
    grid = run_sweep(
        ratios,
        eps_values,
        cfg.build_controller(),
        cfg.build_target(),
        cfg.build_setup(),
        t_cycle=cfg.noise_t_cycle,
        eta_e_given_g=cfg.noise_eta_e_given_g,
        eta_g_given_e=cfg.noise_eta_g_given_e,
        n_traj=n_traj,
        max_cycles=cfg.max_cycles,
        seed=cfg.seed,
        workers=cfg.workers,
    )
    _write_csv(
        outdir / "sweep.csv",
        ["eps_probe", "t_cycle_over_t_cav", "max_median_fidelity", "max_mean_fidelity"],
        (
            (float(e), float(r), float(grid.max_median[i, j]), float(grid.max_mean[i, j]))
            for i, e in enumerate(grid.eps_values)
            for j, r in enumerate(grid.ratios)
        ),
    )
    _write_json(outdir / "sweep.json", grid.to_dict())
    _write_manifest(outdir, cfg, "sweep", {"n_traj": n_traj})
    print(f"sweep: {len(eps_values)}x{len(ratios)} grid, {n_traj} trajectories/cell")
    return 0


def cmd_calibrate_lyapunov(args) -> int:
    cfg = _load_with_overrides(args)
    outdir = _outdir(args)
    grid = _parse_floats(args.alpha_grid)
    n_traj = args.n_traj if args.n_traj is not None else 100
    target = cfg.build_target()
    episode_cfg = cfg.build_episode_config()
    rows = []
    for alpha_max in grid:
        ctx = build_context(target, cfg.space, alpha_max)
        records = run_batch(
            episode_cfg, LyapunovController(ctx), n_traj, workers=cfg.workers
        )
        stats = distribution_stats(records)
        rows.append((float(alpha_max), stats.final_median, stats.final_mean))
    best = max(rows, key=lambda r: r[1])
    _write_csv(
        outdir / "calibration.csv",
        ["alpha_max", "median_final_fidelity", "mean_final_fidelity"],
        rows,
    )
    _write_json(
        outdir / "calibration.json",
        {
            "grid": [r[0] for r in rows],
            "median_final": [r[1] for r in rows],
            "mean_final": [r[2] for r in rows],
            "best_alpha_max": best[0],
            "best_median_final": best[1],
        },
    )
    _write_manifest(outdir, cfg, "calibrate-lyapunov", {"n_traj": n_traj})
    print(f"calibrate-lyapunov: best alpha_max {best[0]} (median {best[1]:.4f})")
    return 0


def cmd_serve(args) -> int:
    cfg = _load_with_overrides(args)
    episode_cfg = cfg.build_episode_config()
    complex_mode = cfg.complex_mode()

    def make_session():
        return BridgeSession(
            episode_cfg, complex_mode, noisy_training=args.noisy_training
        )

    if args.transport == "stdio":
        serve_stdio(make_session())
        return 0
    serve_tcp(
        make_session,
        host=args.host,
        port=args.port,
        ready_callback=lambda p: print(f"listening on {args.host}:{p}", flush=True),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavity-feedback",
        description="Cavity Fock-superposition preparation via measurement feedback",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--config", help="JSON config file (defaults used if absent)")
        p.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override a config field by dotted path",
        )
        p.add_argument("--seed", type=int, help="override run.seed")
        if workers:
            p.add_argument("--workers", type=int, help="override run.workers")

    p_run = sub.add_parser("run", help="run a batch of feedback episodes")
    common(p_run)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--n-traj", type=int, help="trajectories (default from config)")
    p_run.add_argument(
        "--full", action="store_true", help="no desk-scale reduction of noisy runs"
    )
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval-policy", help="evaluate a trained actor")
    common(p_eval)
    p_eval.add_argument("--weights", required=True, help="portable weight file")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--n-traj", type=int)
    p_eval.set_defaults(func=cmd_eval_policy)

    p_tree = sub.add_parser("tree", help="enumerate the 2^N trajectory tree")
    common(p_tree, workers=False)
    p_tree.add_argument("--out", required=True)
    p_tree.add_argument("--depth", type=int, default=10)
    p_tree.add_argument(
        "--initial",
        default="guess",
        help="initial state: 'guess' (displaced vacuum) or a target preset spec",
    )
    p_tree.set_defaults(func=cmd_tree)

    p_sweep = sub.add_parser("sweep", help="noise-parameter grid of batch runs")
    common(p_sweep)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--ratios", required=True, help="t_cycle/t_cav values, comma list")
    p_sweep.add_argument("--eps", required=True, help="eps_probe values, comma list")
    p_sweep.add_argument("--n-traj", type=int)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser(
        "calibrate-lyapunov", help="pick alpha_max maximizing median final fidelity"
    )
    common(p_cal)
    p_cal.add_argument("--out", required=True)
    p_cal.add_argument(
        "--alpha-grid", default="0.1,0.2,0.3,0.4,0.5", help="alpha_max candidates"
    )
    p_cal.add_argument("--n-traj", type=int)
    p_cal.set_defaults(func=cmd_calibrate_lyapunov)

    p_serve = sub.add_parser("serve", help="serve the bridge environment protocol")
    common(p_serve, workers=False)
    p_serve.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=0)
    p_serve.add_argument(
        "--noisy-training",
        action="store_true",
        help="keep the config's noise model during served episodes",
    )
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CavityFeedbackError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
