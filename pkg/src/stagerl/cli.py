"""Command line front end.

Subcommands: train, eval, ablate, saliency, plot.  Each run archives its
fully resolved config next to its outputs, so any CSV in an output
directory can be traced back to the exact settings that produced it.

Exit codes: 0 success, 2 missing or invalid config, 3 checkpoint does not
match the configured environment, 64 unknown subcommand, 130 interrupted
(partial results are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from .config import (CURRICULUM_MODES, ENV_NAMES, ConfigError,
                     ExperimentConfig, build_envs, build_policy, load_config,
                     preset, save_config)
from .nets import Policy, PolicyConfig

COMMANDS = ("train", "eval", "ablate", "saliency", "plot")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_USAGE = 64
EXIT_INTERRUPT = 130


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(policy: Policy, path: str, meta: Optional[dict] = None):
    from dataclasses import asdict

    blob = {
        "policy": asdict(policy.cfg),
        "params": policy.get_flat().tolist(),
        "meta": meta or {},
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(blob, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Policy:
    with open(path) as fh:
        blob = json.load(fh)
    pc_kwargs = dict(blob["policy"])
    pc_kwargs["hidden"] = tuple(pc_kwargs["hidden"])
    policy = Policy(PolicyConfig(**pc_kwargs), seed=0)
    policy.set_flat(np.asarray(blob["params"], dtype=np.float64))
    return policy


# ------------------------------------------------------------------ csv dump

def write_csv(path: str, rows, fieldnames=None):
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def episode_rows(episodes):
    for e in episodes:
        r = dict(e)
        for key in ("final_stages", "max_stages", "returns", "scales_frozen"):
            if isinstance(r.get(key), (list, tuple)):
                r[key] = ";".join(str(v) for v in r[key])
        yield r


def transition_rows(transitions):
    for env, ep, step, agent, src, dst in transitions:
        yield {"env": env, "episode": ep, "step": step, "agent": agent,
               "src": src, "dst": dst}


TRANSITION_FIELDS = ("env", "episode", "step", "agent", "src", "dst")
EPISODE_FIELDS = ("env", "index", "length", "success", "success_time",
                  "final_stages", "max_stages", "returns", "failure_reason",
                  "scales_frozen")


# -------------------------------------------------------------------- shared

def resolve_config(args) -> ExperimentConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise SystemExit(_fail(f"config not found: {args.config}",
                                   EXIT_CONFIG))
        cfg = load_config(args.config)
    else:
        cfg = preset(args.env or "pnp-single")
    if args.env:
        cfg = _replace_validated(cfg, env=args.env)
    if args.curriculum:
        cfg = _replace_validated(cfg, curriculum=args.curriculum)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.trainer.seed = args.seed
    if args.out:
        cfg.out = args.out
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    # agent count follows the env name unless a config pinned it explicitly
    if cfg.env == "pnp-dual" and cfg.world.n_agents == 1 and not args.config:
        cfg.world.n_agents = 2
    return cfg


def _replace_validated(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    import dataclasses
    return dataclasses.replace(cfg, **kw)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def ensure_out(cfg: ExperimentConfig, default: str) -> str:
    out = cfg.out or default
    os.makedirs(out, exist_ok=True)
    cfg.out = out
    save_config(cfg, os.path.join(out, "effective_config.yaml"))
    return out


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    from .trainer import TrainResult, train

    cfg = resolve_config(args)
    out = ensure_out(cfg, "runs/train")
    envs = build_envs(cfg, mode="teacher")
    policy = build_policy(cfg, envs[0])

    def emit(result: TrainResult):
        write_csv(os.path.join(out, "train_log.csv"), result.logs)
        write_csv(os.path.join(out, "episodes.csv"),
                  episode_rows(result.episodes), EPISODE_FIELDS)
        write_csv(os.path.join(out, "transitions.csv"),
                  transition_rows(result.transitions), TRANSITION_FIELDS)
        save_checkpoint(result.policy, os.path.join(out, "checkpoint.json"),
                        meta={"env": cfg.env, "curriculum": cfg.curriculum,
                              "seed": cfg.seed})

    seen_rows = []

    def progress(it, row):
        seen_rows.append(row)
        if it % 10 == 0 or it == cfg.trainer.iterations - 1:
            print(f"iter {it:4d}  reward {row['mean_reward']:8.3f}  "
                  f"success {row['success_rate']:.2f}  "
                  f"stage {row['mean_final_stage']:.2f}", flush=True)

    try:
        result = train(envs, policy, cfg.trainer, callback=progress)
    except KeyboardInterrupt:
        # the policy object is updated in place, so the checkpoint and the
        # per-iteration rows seen so far are an honest partial record
        write_csv(os.path.join(out, "train_log.csv"), seen_rows)
        save_checkpoint(policy, os.path.join(out, "checkpoint.json"),
                        meta={"env": cfg.env, "curriculum": cfg.curriculum,
                              "seed": cfg.seed, "interrupted": True})
        print(f"interrupted: checkpoint saved to {out}/checkpoint.json",
              flush=True)
        return EXIT_INTERRUPT
    emit(result)
    print(f"done: outputs in {out}")
    return EXIT_OK


def _env_for_eval(cfg: ExperimentConfig, noise_sigma, seed: int):
    if noise_sigma is not None and cfg.env in ("pnp-single", "pnp-dual"):
        from .envs import STUDENT, PnPEnv
        return PnPEnv(cfg.world, mode=STUDENT, seed=seed,
                      noise_sigma=noise_sigma)
    env_cfg = _replace_validated(cfg, seed=seed)
    return build_envs(env_cfg, mode="teacher", n_envs=1)[0]


def _check_dims(policy: Policy, env) -> Optional[int]:
    if policy.cfg.obs_dim != env.obs_dim or policy.cfg.act_dim != env.act_dim:
        return _fail(
            f"checkpoint dims (obs {policy.cfg.obs_dim}, act "
            f"{policy.cfg.act_dim}) do not match env '{env.__class__.__name__}'"
            f" (obs {env.obs_dim}, act {env.act_dim})", EXIT_CHECKPOINT)
    return None


def cmd_eval(args) -> int:
    from .analysis import evaluate_policy

    cfg = resolve_config(args)
    if not os.path.exists(args.checkpoint):
        return _fail(f"checkpoint not found: {args.checkpoint}", EXIT_CONFIG)
    policy = load_checkpoint(args.checkpoint)
    env = _env_for_eval(cfg, args.noise_sigma, seed=cfg.seed + 7777)
    code = _check_dims(policy, env)
    if code is not None:
        return code

    out = ensure_out(cfg, "runs/eval")
    res = evaluate_policy(policy, env, n_trials=cfg.trials)
    write_csv(os.path.join(out, "eval_metrics.csv"), [{
        "n_trials": cfg.trials,
        "success_rate": res.success_rate,
        "mean_time": res.mean_time,
        "std_time": res.std_time,
    }])
    print(f"n_trials={cfg.trials}")
    print(res.table_row())
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import train

    cfg = resolve_config(args)
    out = ensure_out(cfg, "runs/ablate")
    curves = {}
    for mode in CURRICULUM_MODES:
        import dataclasses
        mode_cfg = dataclasses.replace(cfg, curriculum=mode)
        envs = build_envs(mode_cfg, mode="teacher")
        policy = build_policy(mode_cfg, envs[0])
        print(f"[{mode}] training {cfg.trainer.iterations} iterations",
              flush=True)
        result = train(envs, policy, cfg.trainer)
        curves[mode] = result.logs
        write_csv(os.path.join(out, f"train_log_{mode}.csv"), result.logs)
        save_checkpoint(result.policy,
                        os.path.join(out, f"checkpoint_{mode}.json"),
                        meta={"env": cfg.env, "curriculum": mode,
                              "seed": cfg.seed})

    rows = []
    for it in range(cfg.trainer.iterations):
        row = {"iteration": it}
        for mode in CURRICULUM_MODES:
            log = curves[mode][it]
            tag = mode.replace("-", "_")
            row[f"{tag}_final_stage"] = log["mean_final_stage"]
            row[f"{tag}_max_stage"] = log["mean_max_stage"]
            row[f"{tag}_success"] = log["success_rate"]
            row[f"{tag}_reward"] = log["mean_reward"]
        rows.append(row)
    write_csv(os.path.join(out, "ablation.csv"), rows)
    print(f"done: outputs in {out}")
    return EXIT_OK


def cmd_saliency(args) -> int:
    from .analysis import saliency_map, saliency_phase_snapshots

    cfg = resolve_config(args)
    if not os.path.exists(args.checkpoint):
        return _fail(f"checkpoint not found: {args.checkpoint}", EXIT_CONFIG)
    policy = load_checkpoint(args.checkpoint)
    env = _env_for_eval(cfg, None, seed=cfg.seed + 8888)
    code = _check_dims(policy, env)
    if code is not None:
        return code

    out = ensure_out(cfg, "runs/saliency")
    if cfg.env in ("pnp-single", "pnp-dual"):
        snaps = saliency_phase_snapshots(policy, env)
    else:
        obs = env.reset()
        snaps = {"reset": saliency_map(policy, obs[0], label="reset")}

    rows = []
    block_names = None
    for label, rec in snaps.items():
        if rec.blocks:
            if block_names is None:
                block_names = list(rec.blocks)
            row = {"phase": label, "action_norm": rec.action_norm,
                   "degenerate": rec.degenerate}
            row.update({name: rec.blocks[name] for name in block_names})
        else:
            row = {"phase": label, "action_norm": rec.action_norm,
                   "degenerate": rec.degenerate}
            row.update({f"x{i}": v for i, v in enumerate(rec.entries)})
        rows.append(row)
    write_csv(os.path.join(out, "saliency.csv"), rows)
    for row in rows:
        print({k: (round(v, 4) if isinstance(v, float) else v)
               for k, v in row.items()})
    print(f"done: outputs in {out}")
    return EXIT_OK


# ------------------------------------------------------------------ plotting

def _read_csv(path: str):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plot_lines(ax, rows, x_key, y_keys):
    if rows:
        xs = [float(r[x_key]) for r in rows]
        for key in y_keys:
            ax.plot(xs, [float(r[key]) for r in rows], label=key)
        ax.legend(fontsize=7)
    ax.set_xlabel(x_key)


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = resolve_config(args)
    out = cfg.out or "runs/train"
    if not os.path.isdir(out):
        return _fail(f"output directory not found: {out}", EXIT_CONFIG)

    made = []

    path = os.path.join(out, "train_log.csv")
    if os.path.exists(path):
        rows = _read_csv(path)
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
        _plot_lines(axes[0], rows, "iteration", ["mean_reward"])
        _plot_lines(axes[1], rows, "iteration",
                    ["mean_final_stage", "mean_max_stage"])
        _plot_lines(axes[2], rows, "iteration", ["success_rate"])
        for ax, title in zip(axes, ["reward", "stage", "success"]):
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(os.path.join(out, "train_curves.png"), dpi=120)
        plt.close(fig)
        made.append("train_curves.png")

    path = os.path.join(out, "ablation.csv")
    if os.path.exists(path):
        rows = _read_csv(path)
        fig, ax = plt.subplots(figsize=(6, 4))
        keys = [k for k in (rows[0].keys() if rows else [])
                if k.endswith("_final_stage")]
        _plot_lines(ax, rows, "iteration", keys)
        ax.set_ylabel("mean final stage")
        fig.tight_layout()
        fig.savefig(os.path.join(out, "ablation.png"), dpi=120)
        plt.close(fig)
        made.append("ablation.png")

    path = os.path.join(out, "saliency.csv")
    if os.path.exists(path):
        rows = _read_csv(path)
        fig, ax = plt.subplots(figsize=(6, 4))
        if rows:
            keys = [k for k in rows[0]
                    if k not in ("phase", "action_norm", "degenerate")]
            mat = np.array([[float(r[k]) for k in keys] for r in rows])
            im = ax.imshow(mat, aspect="auto", cmap="viridis")
            ax.set_xticks(range(len(keys)), keys, rotation=45, fontsize=7)
            ax.set_yticks(range(len(rows)), [r["phase"] for r in rows],
                          fontsize=7)
            fig.colorbar(im, ax=ax)
        ax.set_title("input saliency by phase")
        fig.tight_layout()
        fig.savefig(os.path.join(out, "saliency.png"), dpi=120)
        plt.close(fig)
        made.append("saliency.png")

    path = os.path.join(out, "episodes.csv")
    if os.path.exists(path):
        rows = _read_csv(path)
        fig, ax = plt.subplots(figsize=(6, 4))
        if rows:
            succ = [1.0 if r["success"] == "True" else 0.0 for r in rows]
            window = max(1, len(succ) // 50)
            kernel = np.ones(window) / window
            smooth = np.convolve(succ, kernel, mode="valid")
            ax.plot(smooth)
        ax.set_xlabel("episode")
        ax.set_ylabel("success (rolling)")
        fig.tight_layout()
        fig.savefig(os.path.join(out, "episode_success.png"), dpi=120)
        plt.close(fig)
        made.append("episode_success.png")

    if not made:
        # nothing recognizable: still succeed with an explicitly empty figure
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.set_title("no data")
        fig.savefig(os.path.join(out, "empty.png"), dpi=120)
        plt.close(fig)
        made.append("empty.png")
    print("wrote: " + ", ".join(made))
    return EXIT_OK


# ---------------------------------------------------------------- arg parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagerl",
        description="staged-reward reinforcement learning experiments")
    sub = parser.add_subparsers(dest="command")

    def common(p, trials=False, checkpoint=False):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--curriculum", choices=CURRICULUM_MODES, default=None)
        p.add_argument("--env", choices=ENV_NAMES, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if trials:
            p.add_argument("--trials", type=int, default=None,
                           help="evaluation episodes (default 500)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint.json from a train run")

    common(sub.add_parser("train", help="train a policy"))
    pe = sub.add_parser("eval", help="evaluate a checkpoint")
    common(pe, trials=True, checkpoint=True)
    pe.add_argument("--noise-sigma", type=float, default=None,
                    help="evaluate under noisy student observations")
    common(sub.add_parser(
        "ablate", help="train all three curricula on one env"))
    common(sub.add_parser("saliency", help="input saliency of a checkpoint"),
           checkpoint=True)
    common(sub.add_parser("plot", help="render PNGs from run CSVs"))
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"error: unknown command {argv[0]!r}\n"
              f"usage: stagerl {{{','.join(COMMANDS)}}} [options]",
              file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    handler = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
               "saliency": cmd_saliency, "plot": cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_CONFIG


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
