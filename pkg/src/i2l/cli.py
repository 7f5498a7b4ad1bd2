"""Command-line pipeline: simulate | features | train | evaluate | report.

Every stage reads one JSON experiment config, writes its artifacts under
``--out``, and records them in ``manifest.json``.  Stages are decoupled
through files: ``train`` consumes episode logs if ``simulate`` left them,
``evaluate`` consumes the dataset and tree files from ``train``, and
``report`` regenerates report files without touching the simulator.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import Dataset, TEST
from .experiment import (ConfigError, ExperimentConfig, TreePolicy,
                         derive_seed, mtbf, run_experiment, simulate_episodes)
from .manifest import update_manifest
from .simulator import EpisodeHistory
from .topology import resolve_topology
from .tree import DecisionTree

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _load_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict]:
    config = ExperimentConfig.load(args.config)
    raw = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        raw["seed"] = args.seed
        config = ExperimentConfig.from_json(raw)
    return config, raw


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path("i2l-out") / config.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config_used(out: Path, raw: dict) -> str:
    (out / "config_used.json").write_text(
        json.dumps(raw, indent=2, sort_keys=True) + "\n")
    return "config_used.json"


def _episode_log_name(episode_id: int, topology: str) -> str:
    return f"episode_{episode_id:04d}_{topology}.jsonl"


def cmd_simulate(args: argparse.Namespace) -> int:
    config, raw = _load_config(args)
    out = _out_dir(args, config)
    for name in config.all_topologies():
        try:
            resolve_topology(name)  # fail fast on bad names/paths
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
    episodes = simulate_episodes(config)
    files = [_write_config_used(out, raw)]
    for name, episode_id, history in episodes:
        log_name = _episode_log_name(episode_id, name)
        history.save_jsonl(out / log_name)
        files.append(log_name)
    for name in config.all_topologies():
        topo = resolve_topology(name)
        topo_file = f"topology_{topo.name}.json"
        topo.save(out / topo_file)
        files.append(topo_file)
    update_manifest(out, "simulate", raw, config.seed, files,
                    extra={"episodes": len(episodes)})
    print(f"simulate: wrote {len(episodes)} episode logs to {out}")
    return EXIT_OK


def cmd_features(args: argparse.Namespace) -> int:
    config, raw = _load_config(args)
    out = _out_dir(args, config)
    rep = config.representation
    fs = rep.feature_set()
    payload = {
        "kind": rep.kind,
        "depth_limit": rep.depth if fs is not None else None,
        "k": rep.k_nearest if rep.kind == "egocentric" else None,
        "features": list(rep.names()),
    }
    (out / "featureset.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    files = [_write_config_used(out, raw), "featureset.json"]
    update_manifest(out, "features", raw, config.seed, files,
                    extra={"feature_count": len(payload["features"])})
    print(f"features: {len(payload['features'])} features "
          f"({rep.kind}) written to {out}")
    return EXIT_OK


def _load_episodes(out: Path, config: ExperimentConfig
                   ) -> list[tuple[str, int, EpisodeHistory]] | None:
    logs = sorted(out.glob("episode_*.jsonl"))
    if not logs:
        return None
    episodes = []
    for path in logs:
        stem = path.stem  # episode_0003_B
        parts = stem.split("_")
        episode_id = int(parts[1])
        history = EpisodeHistory.load_jsonl(path)
        episodes.append((history.topology_name, episode_id, history))
    return episodes


def cmd_train(args: argparse.Namespace) -> int:
    config, raw = _load_config(args)
    out = _out_dir(args, config)
    episodes = _load_episodes(out, config)
    result = run_experiment(config, episodes=episodes, deploy=False)
    files = [_write_config_used(out, raw)]
    result.dataset.save_csv(out / "dataset.csv")
    files += ["dataset.csv", "dataset.csv.meta.json"]
    (out / "curves.csv").write_text(result.curves_csv())
    files.append("curves.csv")
    trees_dir = out / "trees"
    trees_dir.mkdir(exist_ok=True)
    index = {}
    for sel in result.selected:
        fname = f"trees/{sel.selection}.json"
        _, tree = result.sequence[sel.index]
        tree.save(out / fname)
        files.append(fname)
        index[sel.selection] = {
            "file": fname, "index": sel.index, "alpha": sel.alpha,
            "leaves": sel.leaves, "used_features": sel.used_features,
            "val_accuracy": sel.val_accuracy,
        }
    (out / "trees" / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n")
    files.append("trees/index.json")
    update_manifest(out, "train", raw, config.seed, files, extra={
        "feature_count": result.dataset.n_features,
        "dataset_rows": len(result.dataset),
        "sequence_length": len(result.sequence),
    })
    print(f"train: dataset of {len(result.dataset)} rows, "
          f"{len(result.sequence)} pruning levels, "
          f"{len(index)} trees written to {out}")
    return EXIT_OK


def _evaluate_trees(config: ExperimentConfig, out: Path, deploy: bool) -> dict:
    dataset = Dataset.load_csv(out / "dataset.csv")
    index_path = out / "trees" / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"missing tree files under {out / 'trees'}; "
                                f"run the train stage first")
    index = json.loads(index_path.read_text())
    report = {"name": config.name, "seed": config.seed,
              "feature_count": dataset.n_features,
              "dataset_rows": len(dataset), "trees": {}}
    prior = None
    if not deploy and (out / "report.json").exists():
        prior = json.loads((out / "report.json").read_text())
    for selection in sorted(index):
        meta = index[selection]
        tree = DecisionTree.load(out / meta["file"])
        entry = dict(meta)
        entry["test_accuracy"] = {}
        entry["deployment"] = {}
        for topo_name in config.test_topologies:
            part = dataset.rows_for_topology(topo_name)
            rows = [i for i, t in enumerate(part.split_tags) if t == TEST]
            if rows:
                sub = part.take(np.asarray(rows, dtype=np.int64))
                entry["test_accuracy"][topo_name] = float(
                    (tree.predict_many(sub.X) == sub.y).mean())
            else:
                entry["test_accuracy"][topo_name] = None
            if deploy:
                policy = TreePolicy(tree=tree, representation=config.representation)
                res = mtbf(policy, resolve_topology(topo_name),
                           config.eval_episodes, config.eval_max_steps,
                           derive_seed(config.seed, 5), config.n_vehicles,
                           config.action_space, config.sim)
                entry["deployment"][topo_name] = {
                    "episodes": res.episodes, "max_steps": res.max_steps,
                    "total_steps": res.total_steps,
                    "collisions": res.collisions, "stalls": res.stalls,
                    "mtbf": res.mtbf,
                }
            elif prior is not None and selection in prior.get("trees", {}):
                entry["deployment"] = prior["trees"][selection].get(
                    "deployment", {})
        report["trees"][selection] = entry
    return report


def _report_csv(report: dict) -> str:
    lines = ["tree,topology,leaves,used_features,accuracy,mtbf,collisions,stalls"]
    for selection in sorted(report["trees"]):
        entry = report["trees"][selection]
        topologies = sorted(set(entry["test_accuracy"]) | set(entry["deployment"]))
        for topo in topologies:
            acc = entry["test_accuracy"].get(topo)
            dep = entry["deployment"].get(topo, {})
            lines.append(",".join([
                selection, topo, str(entry["leaves"]),
                str(entry["used_features"]),
                "" if acc is None else repr(acc),
                repr(dep["mtbf"]) if dep else "",
                str(dep.get("collisions", "")), str(dep.get("stalls", "")),
            ]))
    return "\n".join(lines) + "\n"


def cmd_evaluate(args: argparse.Namespace) -> int:
    config, raw = _load_config(args)
    out = _out_dir(args, config)
    report = _evaluate_trees(config, out, deploy=True)
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(_report_csv(report))
    files = [_write_config_used(out, raw), "report.json", "report.csv"]
    update_manifest(out, "evaluate", raw, config.seed, files)
    print(f"evaluate: report for {len(report['trees'])} trees written to {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    config, raw = _load_config(args)
    out = _out_dir(args, config)
    report = _evaluate_trees(config, out, deploy=False)
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(_report_csv(report))
    files = [_write_config_used(out, raw), "report.json", "report.csv"]
    update_manifest(out, "report", raw, config.seed, files)
    print(f"report: regenerated report files in {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="i2l",
        description="Imitate opaque traffic controllers with decision trees")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="output directory (default i2l-out/<name>)")
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
