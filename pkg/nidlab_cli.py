#!/usr/bin/env python3
"""
NID Lab command line.

Commands: gen, train, eval, embed, ablate, check-grad, render.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from grid_envs import EnvSpec, GridState, generate_episode, generate_episodes, write_episodes
from nid_harness import (
    ROLLOUT_HEADER_NOTE,
    AblationRecord,
    RolloutReport,
    ablation_grid,
    aggregate_reports,
    build_model,
    compound_rollout,
    embedding_report,
    gradient_check_suite,
    load_checkpoint,
    load_training_episodes,
    model_rollout,
    save_checkpoint,
    stochastic_mass_profile,
    train,
    write_csv,
)
from nidlab_config import (
    ablation_configs,
    env_spec_from_config,
    hyper_from_config,
    load_config,
    model_kind,
    resolve_seeds,
    write_effective_config,
)
from nidlab_errors import ConfigError, NidLabError
from scoring_utils import STREAM_GEN, make_rng

VISIBLE_MASS = 0.1
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nidlab", description="Neural NID transition model experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(name: str, help_text: str) -> argparse.ArgumentParser:
        command = sub.add_parser(name, help=help_text)
        command.add_argument("--config", help="JSON run configuration")
        command.add_argument("--seed", type=int, help="Single seed (overrides NIDLAB_SEED and train.seeds)")
        command.add_argument("--out", help="Output directory (overrides output_dir)")
        return command

    gen = common("gen", "Write NDJSON episodes")
    gen.add_argument("--split", choices=["train", "test"])

    train_cmd = common("train", "Train models and write checkpoints and learning curves")
    train_cmd.add_argument("--kind", help="nid, mlp, conv1 or conv3 (overrides model.kind)")
    train_cmd.add_argument("--episodes", help="Train from a fixed NDJSON episode file")

    eval_cmd = common("eval", "Compound rollout errors")
    eval_cmd.add_argument("--kind")
    eval_cmd.add_argument("--split", choices=["train", "test"])
    eval_cmd.add_argument("--checkpoint", help="Checkpoint path (default: output directory)")
    eval_cmd.add_argument("--untrained", action="store_true", help="Evaluate the zero-initialized model")

    embed = common("embed", "Encoder embeddings and Silhouette score")
    embed.add_argument("--checkpoint")

    ablate = common("ablate", "Resumable ablation grid")
    ablate.add_argument("--jobs", type=int, help="Worker processes (default: available cores)")

    common("check-grad", "Finite-difference gradient checks")

    render = common("render", "ASCII frames of an episode or a model rollout")
    render.add_argument("--split", choices=["train", "test"], default="test")
    render.add_argument("--checkpoint", help="Render the model rollout from this checkpoint")
    render.add_argument("--sample", action="store_true", help="Sample predicted rows instead of showing mass")
    return parser


# --- rendering ----------------------------------------------------------------


def render_ascii(spec: EnvSpec, state_or_distribution: Union[GridState, np.ndarray]) -> str:
    """One line per object; '.' marks an empty cell."""

    initials = [obj.name[:1].lower() or "?" for obj in spec.objects]
    if isinstance(state_or_distribution, GridState):
        lines = []
        for mark, p in zip(initials, state_or_distribution.pos):
            cells = ["."] * spec.D
            cells[p] = mark
            lines.append("".join(cells))
        return "\n".join(lines)

    rows = np.asarray(state_or_distribution, dtype=np.float64)
    lines = []
    for mark, row in zip(initials, rows):
        peak = row.max()
        unique_peak = int(np.sum(row == peak)) == 1
        cells = []
        for value in row:
            if unique_peak and value == peak:
                cells.append(mark.upper())
            elif value >= VISIBLE_MASS:
                cells.append(mark)
            else:
                cells.append(".")
        lines.append("".join(cells))
    return "\n".join(lines)


# --- commands -----------------------------------------------------------------


def _banner(title: str, details: Dict[str, Any]) -> None:
    print("=" * 80)
    print(f"NID LAB - {title}")
    print("=" * 80)
    for key, value in details.items():
        print(f"{key}: {value}")


def _output_dir(cfg: Dict[str, Any], args: argparse.Namespace) -> Path:
    out = Path(args.out or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(out: Path, kind: str, seed: int) -> Path:
    return out / f"checkpoint_{kind}_seed{seed}.json"


def cmd_gen(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    split = args.split or cfg["gen"]["split"]
    seed = resolve_seeds(cfg, args.seed)[0]
    n = cfg["gen"]["n_episodes"]
    _banner("EPISODES", {"Environment": spec.name, "Split": split, "Episodes": n, "Seed": seed})
    episodes = generate_episodes(spec, split, n, make_rng(seed, STREAM_GEN))
    path = write_episodes(out / f"episodes_{split}.ndjson", episodes)
    print("\n[GEN COMPLETE]")
    print(f"Episodes file: {path}")
    return EXIT_OK


def cmd_train(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    kind = model_kind(cfg, args.kind)
    seeds = resolve_seeds(cfg, args.seed)
    episodes_path = args.episodes or cfg["train"]["episodes"]
    episodes = load_training_episodes(episodes_path, spec) if episodes_path else None
    _banner(
        "TRAINING",
        {
            "Environment": spec.name,
            "Model": kind,
            "Steps": cfg["train"]["steps"],
            "Seeds": seeds,
            "Data": episodes_path or "online",
        },
    )
    for i, seed in enumerate(seeds, start=1):
        print(f"\n[{i}/{len(seeds)}] seed {seed}")

        def report(bin_index: int, n_bins: int, mean_loss: float) -> None:
            print(f"    bin {bin_index:3d}/{n_bins}  mean loss {mean_loss:.6f}")

        result = train(kind, spec, hyper_from_config(cfg, seed), episodes=episodes, progress=report)
        checkpoint = save_checkpoint(result.model, _checkpoint_path(out, kind, seed))
        curve = write_csv(result.curve.to_frame(), out / f"learning_curve_{kind}_seed{seed}.csv")
        print(f"    checkpoint: {checkpoint}")
        print(f"    learning curve: {curve}")
    print("\n[TRAIN COMPLETE]")
    return EXIT_OK


def _eval_models(cfg: Dict[str, Any], args: argparse.Namespace, out: Path, spec: EnvSpec, kind: str) -> List[Any]:
    if args.checkpoint:
        return [load_checkpoint(args.checkpoint)]
    models = []
    for seed in resolve_seeds(cfg, args.seed):
        if args.untrained:
            hyper = hyper_from_config(cfg, seed).replace(init="zero")
            models.append(build_model(kind, spec, hyper))
        else:
            models.append(load_checkpoint(_checkpoint_path(out, kind, seed)))
    return models


def cmd_eval(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    kind = model_kind(cfg, args.kind)
    splits = [args.split] if args.split else list(cfg["eval"]["splits"])
    n, horizon = cfg["eval"]["n_rollouts"], cfg["eval"]["horizon"]
    models = _eval_models(cfg, args, out, spec, kind)
    kind = models[0].kind
    _banner(
        "EVALUATION",
        {"Environment": spec.name, "Model": kind, "Rollouts": f"{n} x {horizon} steps", "Splits": splits},
    )
    for split in splits:
        reports: List[RolloutReport] = []
        for model in models:
            report = compound_rollout(model, spec, split, n, horizon, seed=model.hyper.seed)
            reports.append(report)
            print(f"[{split}] seed {model.hyper.seed}: cumulative BCE at step {horizon} = {report.final_error():.6f}")
        path = write_csv(
            aggregate_reports(reports), out / f"rollouts_{kind}_{split}.csv", note=ROLLOUT_HEADER_NOTE
        )
        print(f"Rollout file: {path}")

    if spec.stochastic_mover is not None:
        for model in models:
            profile = stochastic_mass_profile(model, spec, n_states=n, seed=model.hyper.seed)
            path = out / f"mass_profile_{kind}_seed{model.hyper.seed}.json"
            path.write_text(json.dumps(profile, indent=2) + "\n", encoding="utf-8")
            print(
                f"Mass profile seed {model.hyper.seed}: left {profile['left']:.4f}  "
                f"right {profile['right']:.4f}  elsewhere {profile['elsewhere']:.4f}"
            )
    print("\n[EVAL COMPLETE]")
    return EXIT_OK


def cmd_embed(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    if args.checkpoint:
        models = [load_checkpoint(args.checkpoint)]
    else:
        models = [load_checkpoint(_checkpoint_path(out, "nid", seed)) for seed in resolve_seeds(cfg, args.seed)]
    _banner("EMBEDDINGS", {"Environment": spec.name, "Models": len(models)})
    for model in models:
        report = embedding_report(model, spec)
        path = out / f"embedding_seed{model.hyper.seed}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"seed {model.hyper.seed}: silhouette {report.silhouette:.6f} -> {path}")
    print("\n[EMBED COMPLETE]")
    return EXIT_OK


def cmd_ablate(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    configs = ablation_configs(cfg)
    jobs = args.jobs or cfg["ablation"]["jobs"]
    _banner(
        "ABLATION GRID",
        {"Environment": spec.name, "Runs": len(configs), "Steps per run": cfg["train"]["steps"], "Jobs": jobs or "auto"},
    )

    def report(i: int, total: int, record: AblationRecord) -> None:
        c = record.config
        status = "ok" if record.status == "ok" else f"FAILED ({record.error['code']})"
        print(f"[{i}/{total}] l1={c.lambda1:g} l2={c.lambda2:g} K={c.K} {c.init} {c.variant} seed={c.seed}: {status}")

    summary = ablation_grid(
        configs,
        spec,
        hyper_from_config(cfg),
        out / "ablation_records.jsonl",
        jobs=jobs,
        n_rollouts=cfg["eval"]["n_rollouts"],
        horizon=cfg["eval"]["horizon"],
        on_record=report,
    )
    print("\n[ABLATION COMPLETE]")
    print(f"Trained: {summary.trained}  Skipped: {summary.skipped}  Failed: {summary.failed}")
    print(f"Records file: {summary.path}")
    return EXIT_OK


def cmd_check_grad(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    block = cfg["check_grad"]
    seed = args.seed if args.seed is not None else block["seed"]
    _banner("GRADIENT CHECK", {"Configurations": block["n_configs"], "Step h": block["h"], "Seed": seed})
    report = gradient_check_suite(n_configs=block["n_configs"], seed=seed, h=block["h"])
    worst = max(report.cases, key=lambda case: case["error"], default=None)
    print(f"Max relative error: {report.max_error:.3e}")
    if worst is not None:
        print(f"Worst case: #{worst['index']} {worst['kind']} {worst['variant']} actions={worst['actions']}")
    if not report.passed(block["tolerance"]):
        print(f"\n[GRADIENT CHECK FAILED] tolerance {block['tolerance']:g}")
        return EXIT_RUNTIME
    print("\n[GRADIENT CHECK PASSED]")
    return EXIT_OK


def cmd_render(cfg: Dict[str, Any], args: argparse.Namespace, out: Path) -> int:
    spec = env_spec_from_config(cfg)
    seed = resolve_seeds(cfg, args.seed)[0]
    episode = generate_episode(spec, args.split, seed)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        frames: List[Any] = model_rollout(
            model,
            spec,
            episode.states[0],
            episode.actions,
            sample=args.sample,
            rng=make_rng(seed, STREAM_GEN, 1),
        )
        source = f"{model.kind} rollout" + (" (sampled)" if args.sample else "")
    else:
        frames = list(episode.states)
        source = "simulator"
    _banner("RENDER", {"Environment": spec.name, "Source": source, "Split": args.split, "Seed": seed})
    for t, frame in enumerate(frames):
        action = episode.actions[t - 1].name if t > 0 and spec.has_agent else ""
        print(f"\nt={t} {action}".rstrip())
        print(render_ascii(spec, frame))
    return EXIT_OK


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "ablate": cmd_ablate,
    "check-grad": cmd_check_grad,
    "render": cmd_render,
}


def _print_failure(exc: NidLabError) -> None:
    print("\n[COMMAND FAILED]")
    print(f"Code: {exc.code}")
    print(f"Reason: {exc.message}")
    if exc.diagnostics:
        print(f"Diagnostics: {json.dumps(exc.diagnostics, default=str)}")


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(list(argv) if argv is not None else None)
    except UsageError as exc:
        print(f"Usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = load_config(args.config)
        out = _output_dir(cfg, args)
        write_effective_config(cfg, out)
        return HANDLERS[args.command](cfg, args, out)
    except ConfigError as exc:
        _print_failure(exc)
        return EXIT_USAGE
    except NidLabError as exc:
        _print_failure(exc)
        return EXIT_RUNTIME


def main() -> int:
    return run_command()


if __name__ == "__main__":
    raise SystemExit(main())
