"""End-to-end imitation experiments: collect, fit, prune, measure.

The pipeline mirrors the five-stage recipe: observe seeded episodes of a
target controller, turn every (state, vehicle) pair into a feature row,
rebalance action classes, split by episode, grow a tree to purity, prune
it into a nested sequence, then score selected trees by held-out accuracy
and by deploying them as live controllers (mean time between failures).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (Dataset, rebalance, rebalance_indices, split_by_episode,
                      TRAIN, VAL, TEST)
from .features import (FeatureEvaluator, FeatureSet, enumerate_features,
                       evaluate_matrix, handcrafted_features)
from .policies import (PolicySpec, RandomPolicy, egocentric_feature_names,
                       egocentric_features)
from .simulator import ActionSpace, EpisodeHistory, MarkovState, SimParams, run_episode
from .topology import TrackTopology, resolve_topology
from .tree import DecisionTree, LossFunction, PruneSequence, grow, mccp


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def derive_seed(master: int, *key: int) -> int:
    """Deterministic child seed for a stage or episode."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def thread_budget() -> int:
    """Worker bound for internal parallelism, from I2L_THREADS (default 1)."""
    raw = os.environ.get("I2L_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Representation:
    """How Markov states become feature vectors."""

    kind: str                     # synthesized | handcrafted | egocentric
    depth: int = 6
    k_nearest: int = 4

    def __post_init__(self):
        if self.kind not in ("synthesized", "handcrafted", "egocentric"):
            raise ConfigError(f"representation.kind {self.kind!r} unknown")

    def feature_set(self) -> FeatureSet | None:
        if self.kind == "synthesized":
            return enumerate_features(self.depth)
        if self.kind == "handcrafted":
            return FeatureSet(exprs=handcrafted_features(), depth_limit=6)
        return None

    def names(self) -> tuple[str, ...]:
        fs = self.feature_set()
        if fs is not None:
            return fs.names
        return egocentric_feature_names(self.k_nearest)

    def matrix(self, history: EpisodeHistory, topology: TrackTopology
               ) -> tuple[np.ndarray, np.ndarray]:
        fs = self.feature_set()
        if fs is not None:
            return evaluate_matrix(fs, history, topology)
        rows, labels = [], []
        for state, actions in history.decision_records():
            for i in range(len(state.vehicles)):
                rows.append(egocentric_features(state, topology, i, self.k_nearest))
                labels.append(actions[i])
        X = np.array(rows, dtype=np.float64).reshape(
            len(rows), 4 * self.k_nearest)
        return X, np.array(labels, dtype=np.int64)

    def vector_fn(self, used: Sequence[int] | None = None):
        """State -> feature vector callable for live deployment.

        When ``used`` is given, only those columns are filled; a tree never
        reads the others.
        """
        if self.kind == "egocentric":
            k = self.k_nearest
            return lambda state, topo, ego: list(
                egocentric_features(state, topo, ego, k))
        fs = self.feature_set()
        width = len(fs)
        idx = list(range(width)) if used is None else sorted(used)
        evaluator = FeatureEvaluator([fs.exprs[i] for i in idx])

        def fn(state, topo, ego):
            out = [0.0] * width
            for i, v in zip(idx, evaluator.evaluate(state, topo, ego)):
                out[i] = v
            return out

        return fn


@dataclass
class TreePolicy:
    """Deploy a learned tree as a live controller."""

    tree: DecisionTree
    representation: Representation

    def __post_init__(self):
        self._vector = self.representation.vector_fn(self.tree.used_features())

    def __call__(self, state: MarkovState, topology: TrackTopology, ego: int) -> int:
        return self.tree.predict(self._vector(state, topology, ego))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    target_policy: PolicySpec
    representation: Representation
    train_topologies: tuple[str, ...]
    test_topologies: tuple[str, ...]
    episodes_per_topology: int = 6
    max_steps: int = 700
    n_vehicles: int = 11
    dataset_target: int = 20000
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    prune_levels: tuple[int, ...] | str = "auto"
    eval_episodes: int = 10
    eval_max_steps: int = 1000
    sim: SimParams = field(default_factory=SimParams)
    action_space: ActionSpace = field(default_factory=ActionSpace)

    def __post_init__(self):
        if not self.train_topologies:
            raise ConfigError("train_topologies must not be empty")
        if not self.test_topologies:
            raise ConfigError("test_topologies must not be empty")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must sum to 1")
        if self.episodes_per_topology < 1:
            raise ConfigError("episodes_per_topology must be positive")
        if self.seed is None:
            raise ConfigError("seed is mandatory")

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        def need(key: str):
            if key not in data:
                raise ConfigError(f"missing config field {key!r}")
            return data[key]

        policy = need("target_policy")
        rep = need("representation")
        try:
            spec = PolicySpec(kind=policy["kind"],
                              parameters=policy.get("parameters", {}))
            representation = Representation(
                kind=rep["kind"], depth=int(rep.get("depth", 6)),
                k_nearest=int(rep.get("k", 4)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad target_policy/representation: {exc}") from exc
        sim_over = data.get("sim", {})
        try:
            sim = SimParams(**sim_over)
        except TypeError as exc:
            raise ConfigError(f"bad sim overrides: {exc}") from exc
        levels = data.get("prune_levels", "auto")
        if levels != "auto":
            levels = tuple(int(v) for v in levels)
        return cls(
            name=str(need("name")),
            seed=int(need("seed")),
            target_policy=spec,
            representation=representation,
            train_topologies=tuple(need("train_topologies")),
            test_topologies=tuple(need("test_topologies")),
            episodes_per_topology=int(data.get("episodes_per_topology", 6)),
            max_steps=int(data.get("max_steps", 700)),
            n_vehicles=int(data.get("n_vehicles", 11)),
            dataset_target=int(data.get("dataset_target", 20000)),
            split_fractions=tuple(data.get("split_fractions", (0.7, 0.15, 0.15))),
            prune_levels=levels,
            eval_episodes=int(data.get("eval_episodes", 10)),
            eval_max_steps=int(data.get("eval_max_steps", 1000)),
            sim=sim,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        return cls.from_json(data)

    def all_topologies(self) -> tuple[str, ...]:
        seen: list[str] = []
        for name in self.train_topologies + self.test_topologies:
            if name not in seen:
                seen.append(name)
        return tuple(seen)


def simulate_episodes(config: ExperimentConfig
                      ) -> list[tuple[str, int, EpisodeHistory]]:
    """Seeded training episodes over every configured topology.

    Returns (topology name, episode id, history) tuples; episode ids are
    globally unique and stable under the config seed.
    """
    policy = config.target_policy.build(config.action_space, config.sim)
    out: list[tuple[str, int, EpisodeHistory]] = []
    episode_id = 0
    for t_idx, name in enumerate(config.all_topologies()):
        topology = resolve_topology(name)
        for ep in range(config.episodes_per_topology):
            seed = derive_seed(config.seed, 1, t_idx, ep)
            history = run_episode(topology, policy, config.n_vehicles,
                                  config.max_steps, seed,
                                  config.action_space, config.sim)
            out.append((name, episode_id, history))
            episode_id += 1
    return out


def collect_dataset(config: ExperimentConfig,
                    episodes: list[tuple[str, int, EpisodeHistory]] | None = None
                    ) -> Dataset:
    """Feature rows with action labels and per-row provenance."""
    if episodes is None:
        episodes = simulate_episodes(config)
    names = config.representation.names()
    blocks, labels, ep_ids, topos = [], [], [], []
    topo_cache: dict[str, TrackTopology] = {}
    for name, episode_id, history in episodes:
        topology = topo_cache.setdefault(name, resolve_topology(name))
        X, y = config.representation.matrix(history, topology)
        blocks.append(X)
        labels.append(y)
        ep_ids.append(np.full(len(y), episode_id, dtype=np.int64))
        topos.extend([name] * len(y))
    X = np.concatenate(blocks) if blocks else np.empty((0, len(names)))
    return Dataset(X=X, y=np.concatenate(labels), feature_names=names,
                   episode_ids=np.concatenate(ep_ids), topologies=tuple(topos))


def _split_with_foreign(config: ExperimentConfig, dataset: Dataset) -> Dataset:
    """Episode-wise split; foreign-topology episodes always land in test."""
    train_rows = np.array([t in config.train_topologies
                           for t in dataset.topologies])
    home = dataset.take(np.nonzero(train_rows)[0])
    home = split_by_episode(home, config.split_fractions,
                            derive_seed(config.seed, 3))
    out_tags = []
    hi = 0
    for is_home in train_rows:
        if is_home:
            out_tags.append(home.split_tags[hi])
            hi += 1
        else:
            out_tags.append(TEST)
    return replace(dataset, split_tags=tuple(out_tags))


def prepare_dataset(config: ExperimentConfig, dataset: Dataset) -> Dataset:
    """Rebalance then split; foreign-topology episodes always land in test."""
    dataset = rebalance(dataset, derive_seed(config.seed, 2),
                        target_total=config.dataset_target)
    return _split_with_foreign(config, dataset)


def _lazy_balanced_dataset(config: ExperimentConfig,
                           episodes: list[tuple[str, int, EpisodeHistory]]
                           ) -> Dataset:
    """Rebalance on labels first, then featureize only the surviving rows.

    Row-for-row identical to ``rebalance(collect_dataset(...))`` but skips
    feature evaluation for rows the downsample would discard.
    """
    pool: list[tuple[int, str, MarkovState, int, int]] = []
    for name, episode_id, history in episodes:
        for state, actions in history.decision_records():
            for i in range(len(state.vehicles)):
                pool.append((episode_id, name, state, i, actions[i]))
    labels = np.array([p[4] for p in pool], dtype=np.int64)
    idx = rebalance_indices(labels, derive_seed(config.seed, 2),
                            target_total=config.dataset_target)
    names = config.representation.names()
    fs = config.representation.feature_set()
    if fs is not None:
        evaluator = FeatureEvaluator(fs.exprs)
        vector = evaluator.evaluate
    else:
        k = config.representation.k_nearest
        vector = lambda state, topo, veh: egocentric_features(state, topo, veh, k)
    topo_cache: dict[str, TrackTopology] = {}
    X = np.empty((len(idx), len(names)), dtype=np.float64)
    for out_row, i in enumerate(idx):
        episode_id, name, state, veh, _ = pool[i]
        topo = topo_cache.setdefault(name, resolve_topology(name))
        X[out_row] = vector(state, topo, veh)
    return Dataset(
        X=X, y=labels[idx], feature_names=names,
        episode_ids=np.array([pool[i][0] for i in idx], dtype=np.int64),
        topologies=tuple(pool[i][1] for i in idx))


def accuracy(tree: DecisionTree, dataset: Dataset, tag: str) -> float:
    """Fraction of rows with the given tag the tree labels correctly."""
    part = dataset.rows_with_tag(tag)
    if len(part) == 0:
        raise ValueError(f"no rows tagged {tag!r}")
    return float((tree.predict_many(part.X) == part.y).mean())


@dataclass(frozen=True)
class DeploymentResult:
    episodes: int
    max_steps: int
    total_steps: int
    collisions: int
    stalls: int

    @property
    def failures(self) -> int:
        return self.collisions + self.stalls

    @property
    def mtbf(self) -> float:
        if self.failures == 0:
            return float(self.episodes * self.max_steps)
        return self.total_steps / self.failures


def aggregate_mtbf(step_counts: Sequence[int], terminations: Sequence[str],
                   episodes: int, max_steps: int) -> DeploymentResult:
    """Fold per-episode outcomes into the failure metric."""
    return DeploymentResult(
        episodes=episodes, max_steps=max_steps,
        total_steps=int(sum(step_counts)),
        collisions=sum(1 for t in terminations if t == "collision"),
        stalls=sum(1 for t in terminations if t == "stall"))


def mtbf(policy, topology: TrackTopology, episodes: int, max_steps: int,
         seed: int, n_vehicles: int = 11,
         action_space: ActionSpace = ActionSpace(),
         params: SimParams = SimParams()) -> DeploymentResult:
    """Deploy a controller and measure mean time between failures."""
    if episodes < 1:
        raise ValueError("at least one episode required")
    seeds = [derive_seed(seed, 4, k) for k in range(episodes)]

    def run_one(ep_seed: int) -> tuple[int, str]:
        h = run_episode(topology, policy, n_vehicles, max_steps, ep_seed,
                        action_space, params)
        return h.steps, h.termination

    workers = thread_budget()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, seeds))
    else:
        results = [run_one(s) for s in seeds]
    return aggregate_mtbf([r[0] for r in results], [r[1] for r in results],
                          episodes, max_steps)


@dataclass(frozen=True)
class CurvePoint:
    index: int
    alpha: float
    leaves: int
    used_features: int
    val_accuracy: float


@dataclass(frozen=True)
class SelectedTree:
    selection: str          # "T0", "level-3", "auto"
    index: int              # position in the prune sequence
    alpha: float
    leaves: int
    used_features: int
    val_accuracy: float
    test_accuracy: dict     # topology -> accuracy (None if no test rows)
    deployment: dict        # topology -> DeploymentResult


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    sequence: PruneSequence
    curves: list[CurvePoint]
    selected: list[SelectedTree]

    def report_json(self) -> dict:
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "feature_count": self.dataset.n_features,
            "dataset_rows": len(self.dataset),
            "class_counts": self.dataset.class_counts().tolist(),
            "curves": [vars(c) for c in self.curves],
            "selected": [
                {
                    "selection": s.selection,
                    "index": s.index,
                    "alpha": s.alpha,
                    "leaves": s.leaves,
                    "used_features": s.used_features,
                    "val_accuracy": s.val_accuracy,
                    "test_accuracy": s.test_accuracy,
                    "deployment": {
                        topo: {
                            "episodes": d.episodes,
                            "max_steps": d.max_steps,
                            "total_steps": d.total_steps,
                            "collisions": d.collisions,
                            "stalls": d.stalls,
                            "mtbf": d.mtbf,
                        }
                        for topo, d in s.deployment.items()
                    },
                }
                for s in self.selected
            ],
        }

    def curves_csv(self) -> str:
        lines = ["index,alpha,leaves,used_features,val_accuracy"]
        for c in self.curves:
            lines.append(f"{c.index},{c.alpha!r},{c.leaves},"
                         f"{c.used_features},{c.val_accuracy!r}")
        return "\n".join(lines) + "\n"

    def report_csv(self) -> str:
        lines = ["tree,topology,leaves,used_features,accuracy,mtbf,collisions,stalls"]
        for s in self.selected:
            for topo in sorted(s.deployment):
                acc = s.test_accuracy.get(topo)
                d = s.deployment[topo]
                lines.append(
                    f"{s.selection},{topo},{s.leaves},{s.used_features},"
                    f"{'' if acc is None else repr(acc)},{d.mtbf!r},"
                    f"{d.collisions},{d.stalls}")
        return "\n".join(lines) + "\n"


def _select_indices(config: ExperimentConfig, curves: list[CurvePoint]
                    ) -> list[tuple[str, int]]:
    picks: list[tuple[str, int]] = [("T0", 0)]
    if config.prune_levels == "auto":
        best = 0
        for c in curves:
            if c.val_accuracy >= curves[best].val_accuracy:
                best = c.index
        if best != 0:
            picks.append(("auto", best))
        else:
            picks.append(("auto", 0))
    else:
        for level in config.prune_levels:
            if not 0 <= level < len(curves):
                raise ConfigError(
                    f"prune level {level} outside the sequence "
                    f"(length {len(curves)})")
            picks.append((f"level-{level}", level))
    seen: set[int] = set()
    out = []
    for name, idx in picks:
        if idx in seen and name != "T0":
            continue
        seen.add(idx)
        out.append((name, idx))
    return out


def run_experiment(config: ExperimentConfig,
                   episodes: list[tuple[str, int, EpisodeHistory]] | None = None,
                   deploy: bool = True) -> ExperimentResult:
    """The full pipeline for one configuration."""
    if episodes is None:
        episodes = simulate_episodes(config)
    dataset = _split_with_foreign(config, _lazy_balanced_dataset(config, episodes))
    train = dataset.rows_with_tag(TRAIN)
    loss = LossFunction.absolute()
    t0 = grow(train.X, train.y, loss, dataset.feature_names)
    sequence = mccp(t0)
    val = dataset.rows_with_tag(VAL)
    curves = []
    for k, (alpha, tree) in enumerate(sequence):
        val_acc = float((tree.predict_many(val.X) == val.y).mean())
        curves.append(CurvePoint(index=k, alpha=alpha, leaves=tree.leaf_count,
                                 used_features=len(tree.used_features()),
                                 val_accuracy=val_acc))
    selected = []
    for name, idx in _select_indices(config, curves):
        alpha, tree = sequence[idx]
        test_acc: dict = {}
        deployment: dict = {}
        for topo_name in config.test_topologies:
            part = dataset.rows_for_topology(topo_name)
            tag_rows = [i for i, t in enumerate(part.split_tags) if t == TEST]
            if tag_rows:
                sub = part.take(np.asarray(tag_rows, dtype=np.int64))
                test_acc[topo_name] = float(
                    (tree.predict_many(sub.X) == sub.y).mean())
            else:
                test_acc[topo_name] = None
            if deploy:
                policy = TreePolicy(tree=tree, representation=config.representation)
                deployment[topo_name] = mtbf(
                    policy, resolve_topology(topo_name), config.eval_episodes,
                    config.eval_max_steps, derive_seed(config.seed, 5),
                    config.n_vehicles, config.action_space, config.sim)
        selected.append(SelectedTree(
            selection=name, index=idx, alpha=alpha, leaves=tree.leaf_count,
            used_features=len(tree.used_features()),
            val_accuracy=curves[idx].val_accuracy,
            test_accuracy=test_acc, deployment=deployment))
    return ExperimentResult(config=config, dataset=dataset, sequence=sequence,
                            curves=curves, selected=selected)
