"""Command-line entry points: train, eval, lab, ablate.

Every flag mirrors a config field, so the full surface is discoverable with
--help and anything reproducible from a config echo. Exit codes separate the
three failure families: 2 configuration, 3 numerics, 4 input/output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    LabConfig,
    PRESETS,
    TrainConfig,
    config_from_sources,
    lab_config_from_sources,
)
from .envs import NormalizerState
from .errors import ConfigurationError, NumericError, SimulationError
from .lab import (
    METHODS,
    TRACE_COLUMNS,
    gradient_variance_probe,
    render_paths,
    run_comparison,
)
from .nets import flat_to_params
from .trainer import actor_spec_for, eval_seed_for, evaluate, train, write_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

ABLATION_VARIANTS = (
    ("baseline", {}),
    ("no_hl_gauss", {"use_hl_gauss": False}),
    ("no_layer_norm", {"use_layer_norm": False}),
    ("no_aux_loss", {"use_aux_loss": False}),
    ("no_kl_reg", {"use_kl_reg": False}),
)

ABLATION_COLUMNS = ("env", "scale", "n_envs", "variant", "mean_final_return",
                    "mean_best_return", "delta_vs_baseline")


def _add_config_flags(parser: argparse.ArgumentParser, config_cls) -> None:
    """One optional flag per config field; None means "not overridden"."""
    for field in dataclasses.fields(config_cls):
        flag = "--" + field.name.replace("_", "-")
        if field.type in ("bool", bool):
            parser.add_argument(flag, dest=field.name, default=None,
                                action=argparse.BooleanOptionalAction)
        elif field.type in ("int", int):
            parser.add_argument(flag, dest=field.name, type=int, default=None)
        elif field.type in ("float", float):
            parser.add_argument(flag, dest=field.name, type=float, default=None)
        elif field.type in ("tuple", tuple):
            parser.add_argument(flag, dest=field.name, type=float, nargs=2,
                                default=None)
        else:
            parser.add_argument(flag, dest=field.name, type=str, default=None)


def _flag_overrides(ns: argparse.Namespace, config_cls) -> dict:
    out = {}
    for field in dataclasses.fields(config_cls):
        value = getattr(ns, field.name, None)
        if value is None:
            continue
        out[field.name] = tuple(value) if isinstance(value, list) else value
    return out


def cmd_train(ns: argparse.Namespace) -> int:
    config = config_from_sources(ns.preset, ns.config, _flag_overrides(ns, TrainConfig))
    run_dir = train(config, ns.out)
    summary = json.loads((run_dir / "summary.json").read_text())
    print(f"run directory: {run_dir}")
    print(f"env steps: {summary['env_steps']}  iterations: {summary['iterations']}")
    print(f"final eval return: {summary['final_eval_return']:.2f}  "
          f"best: {summary['best_eval_return']:.2f}")
    return EXIT_OK


def _load_run(run_dir: Path) -> tuple[TrainConfig, dict]:
    manifest_path = run_dir / "manifest.json"
    checkpoint_path = run_dir / "checkpoint.npz"
    for path in (manifest_path, checkpoint_path):
        if not path.exists():
            raise FileNotFoundError(f"missing run artifact: {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        config = TrainConfig(**manifest["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigurationError(f"unreadable manifest {manifest_path}: {e}") from e
    with np.load(checkpoint_path) as ck:
        checkpoint = {name: ck[name] for name in ck.files}
    return config, checkpoint


def cmd_eval(ns: argparse.Namespace) -> int:
    run_dir = Path(ns.run_dir)
    config, checkpoint = _load_run(run_dir)
    if ns.episodes is not None:
        config = dataclasses.replace(config, eval_episodes=ns.episodes)
    actor = flat_to_params(checkpoint["actor_flat"], actor_spec_for(config).trunk_spec())
    normalizer = NormalizerState(mean=checkpoint["normalizer_mean"],
                                 m2=checkpoint["normalizer_m2"],
                                 count=float(checkpoint["normalizer_count"]))
    iteration = int(checkpoint["iteration"])
    scores = evaluate(actor, normalizer, config, eval_seed_for(config.seed, iteration))
    print(json.dumps({"run_dir": str(run_dir), "iteration": iteration, **scores},
                     indent=2))
    return EXIT_OK


def cmd_lab(ns: argparse.Namespace) -> int:
    config = lab_config_from_sources(ns.config, _flag_overrides(ns, LabConfig))
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_comparison(config)
    for method in METHODS:
        write_csv(out / f"trace_{method}.csv", TRACE_COLUMNS, result.traces[method])
    probe = gradient_variance_probe(config)
    summary = {
        "config": dataclasses.asdict(config),
        "final_objectives": result.final_objectives,
        "variance_probe": probe,
    }
    (out / "lab_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if ns.svg:
        render_paths(result, ns.svg)
    print(f"lab artifacts in: {out}")
    for method in METHODS:
        print(f"  {method:16s} final objective {result.final_objectives[method]:+.4f}")
    print(f"  gradient variance ratio (score / pathwise): {probe['ratio']:.1f}")
    return EXIT_OK


def run_ablation(env: str, out_dir, seeds=(0, 1), total_steps: int = 150_000,
                 scales: tuple = (64, 16), eval_interval: int = 5) -> list[dict]:
    """Single-removal sweep at two batch scales, equal env-step budget.

    Final performance per run is the average of the last three evaluations,
    which smooths single-snapshot noise before seeds are averaged.
    """
    rows = []
    for n_envs in scales:
        scale = "large" if n_envs == max(scales) else "small"
        base_final = None
        for variant, toggles in ABLATION_VARIANTS:
            finals, bests = [], []
            for seed in seeds:
                config = TrainConfig(env=env, seed=seed, n_envs=n_envs,
                                     total_steps=total_steps,
                                     eval_interval=eval_interval, **toggles)
                run_dir = train(config, Path(out_dir) / "runs")
                summary = json.loads((run_dir / "summary.json").read_text())
                finals.append(float(np.mean(summary["eval_returns"][-3:])))
                bests.append(summary["best_eval_return"])
            row = {
                "env": env,
                "scale": scale,
                "n_envs": n_envs,
                "variant": variant,
                "mean_final_return": float(np.mean(finals)),
                "mean_best_return": float(np.mean(bests)),
            }
            if variant == "baseline":
                base_final = row["mean_final_return"]
            row["delta_vs_baseline"] = row["mean_final_return"] - base_final
            rows.append(row)
    return rows


def cmd_ablate(ns: argparse.Namespace) -> int:
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(range(ns.start_seed, ns.start_seed + ns.seeds))
    rows = run_ablation(ns.env, out, seeds=seeds, total_steps=ns.total_steps,
                        scales=(ns.large_envs, ns.small_envs))
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    print(f"{'scale':8s} {'variant':16s} {'final':>10s} {'best':>10s} {'delta':>8s}")
    for row in rows:
        print(f"{row['scale']:8s} {row['variant']:16s} "
              f"{row['mean_final_return']:10.1f} {row['mean_best_return']:10.1f} "
              f"{row['delta_vs_baseline']:8.1f}")
    print(f"table written to {out / 'ablation.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathrl",
        description="Pathwise policy optimization: training, evaluation, and "
                    "gradient-estimator studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a full training job")
    p_train.add_argument("--preset", choices=sorted(PRESETS), default="full",
                         help="base defaults; the full-scale values unless "
                              "'desk' is chosen")
    p_train.add_argument("--config", default=None, help="JSON config file")
    p_train.add_argument("--out", default="runs", help="output directory")
    _add_config_flags(p_train, TrainConfig)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a saved checkpoint with the "
                                         "deterministic policy")
    p_eval.add_argument("run_dir", help="run directory holding manifest.json "
                                        "and checkpoint.npz")
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_lab = sub.add_parser("lab", help="compare gradient estimators on the "
                                       "analytic test surface")
    p_lab.add_argument("--config", default=None, help="JSON config file")
    p_lab.add_argument("--out", default="lab_out", help="output directory")
    p_lab.add_argument("--svg", default=None, help="optional path plot (SVG)")
    _add_config_flags(p_lab, LabConfig)
    p_lab.set_defaults(func=cmd_lab)

    p_abl = sub.add_parser("ablate", help="single-removal sweep at two batch "
                                          "scales")
    p_abl.add_argument("--env", default="pendulum")
    p_abl.add_argument("--out", default="ablation_out")
    p_abl.add_argument("--seeds", type=int, default=2, help="seeds per cell")
    p_abl.add_argument("--start-seed", type=int, default=0)
    p_abl.add_argument("--total-steps", type=int, default=150_000)
    p_abl.add_argument("--large-envs", type=int, default=64)
    p_abl.add_argument("--small-envs", type=int, default=16)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SimulationError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
