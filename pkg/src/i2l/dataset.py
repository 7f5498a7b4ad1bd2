"""Training data assembly: tabular container, rebalancing, and splits.

A dataset is the feature matrix with action labels plus per-row provenance
(episode id and source topology) that makes leakage-free splitting
possible: rows of one episode always share a split tag.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

TRAIN, VAL, TEST = "train", "val", "test"
SPLIT_ORDER = (TRAIN, VAL, TEST)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray                  # rows x features, float64
    y: np.ndarray                  # action indices, int64
    feature_names: tuple[str, ...]
    episode_ids: np.ndarray        # int64 per row
    topologies: tuple[str, ...]    # per row
    split_tags: tuple[str, ...] = ()   # per row; empty until split

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape != (n, len(self.feature_names)):
            raise ValueError("feature matrix shape does not match names/labels")
        if len(self.episode_ids) != n or len(self.topologies) != n:
            raise ValueError("provenance arrays must cover every row")
        if self.split_tags and len(self.split_tags) != n:
            raise ValueError("split tags must cover every row")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def class_counts(self, n_actions: int = 5) -> np.ndarray:
        return np.bincount(self.y, minlength=n_actions)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[idx], y=self.y[idx], feature_names=self.feature_names,
            episode_ids=self.episode_ids[idx],
            topologies=tuple(self.topologies[i] for i in idx),
            split_tags=tuple(self.split_tags[i] for i in idx) if self.split_tags else ())

    def rows_with_tag(self, tag: str) -> "Dataset":
        if not self.split_tags:
            raise ValueError("dataset has not been split")
        idx = np.array([i for i, t in enumerate(self.split_tags) if t == tag],
                       dtype=np.int64)
        return self.take(idx)

    def rows_for_topology(self, name: str) -> "Dataset":
        idx = np.array([i for i, t in enumerate(self.topologies) if t == name],
                       dtype=np.int64)
        return self.take(idx)

    def save_csv(self, path: str | Path) -> None:
        """Feature columns plus the final action column; provenance goes to
        a sidecar ``<path>.meta.json``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.feature_names) + ["action"])
            for i in range(len(self)):
                writer.writerow([repr(v) for v in self.X[i].tolist()]
                                + [int(self.y[i])])
        meta = {
            "episode_ids": self.episode_ids.tolist(),
            "topologies": list(self.topologies),
            "split_tags": list(self.split_tags),
        }
        Path(str(path) + ".meta.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n")

    @classmethod
    def load_csv(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        names = tuple(header[:-1])
        X = np.array([[float(v) for v in row[:-1]] for row in rows],
                     dtype=np.float64).reshape(len(rows), len(names))
        y = np.array([int(row[-1]) for row in rows], dtype=np.int64)
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            episode_ids = np.asarray(meta["episode_ids"], dtype=np.int64)
            topologies = tuple(meta["topologies"])
            split_tags = tuple(meta["split_tags"])
        else:
            episode_ids = np.zeros(len(y), dtype=np.int64)
            topologies = tuple("" for _ in range(len(y)))
            split_tags = ()
        return cls(X=X, y=y, feature_names=names, episode_ids=episode_ids,
                   topologies=topologies, split_tags=split_tags)


class MissingActionClass(ValueError):
    """An action class has no samples, so rebalancing is impossible."""

    def __init__(self, action: int):
        self.action = action
        super().__init__(
            f"action class {action} has no samples; the collected behaviour "
            f"does not cover the full action space")


def rebalance_indices(labels: np.ndarray, seed: int,
                      target_total: int | None = None,
                      n_actions: int = 5) -> np.ndarray:
    """Row indices of a class-balanced uniform downsample, in original order.

    The per-class quota is the smallest class count, further reduced to
    ``target_total / n_actions`` when a target size is given.
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_actions)
    for a in range(n_actions):
        if counts[a] == 0:
            raise MissingActionClass(a)
    quota = int(counts.min())
    if target_total is not None:
        quota = min(quota, target_total // n_actions)
    if quota < 1:
        raise ValueError("rebalancing quota must be at least one row per class")
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for a in range(n_actions):
        rows = np.nonzero(labels == a)[0]
        keep.append(rng.choice(rows, size=quota, replace=False))
    return np.sort(np.concatenate(keep))


def rebalance(dataset: Dataset, seed: int, target_total: int | None = None,
              n_actions: int = 5) -> Dataset:
    """Uniformly downsample every action class to a common count.

    Surviving rows keep their original order.
    """
    return dataset.take(rebalance_indices(dataset.y, seed, target_total,
                                          n_actions))


def split_by_episode(dataset: Dataset, fractions: tuple[float, float, float],
                     seed: int) -> Dataset:
    """Assign train/val/test tags episode-wise (no episode straddles tags).

    Episode counts per part follow largest-remainder rounding of the
    fractions; remainder ties favour the earlier part (train, val, test).
    """
    if len(fractions) != 3:
        raise ValueError("exactly three split fractions required")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    episodes = np.unique(dataset.episode_ids)
    n_parts = sum(1 for f in fractions if f > 0)
    if len(episodes) < n_parts:
        raise ValueError(
            f"{len(episodes)} episodes cannot fill {n_parts} split parts")
    rng = np.random.default_rng(seed)
    order = rng.permutation(episodes)
    quotas = _largest_remainder(len(episodes), fractions)
    tag_of: dict[int, str] = {}
    start = 0
    for tag, q in zip(SPLIT_ORDER, quotas):
        for ep in order[start:start + q]:
            tag_of[int(ep)] = tag
        start += q
    tags = tuple(tag_of[int(ep)] for ep in dataset.episode_ids)
    return replace(dataset, split_tags=tags)


def _largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [total * f for f in fractions]
    base = [int(np.floor(r)) for r in raw]
    shortfall = total - sum(base)
    remainders = sorted(range(len(fractions)),
                        key=lambda i: (-(raw[i] - base[i]), i))
    for i in remainders[:shortfall]:
        base[i] += 1
    return base
