"""Discrete-time multi-vehicle traffic MDP.

Vehicles live on the loops of a :class:`~i2l.topology.TrackTopology`, each
described by (loop index, arc position, speed).  Every step each vehicle
picks one of five acceleration levels; speeds are clamped to [0, v_max] and
positions advance modulo the loop length.  Episodes terminate on the first
collision, on a sustained all-stopped window (a stall), or at the step
limit.  All randomness flows through a seed, so identical (seed, config)
pairs give bit-identical histories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .topology import TrackTopology


@dataclass(frozen=True)
class ActionSpace:
    """Five ordered acceleration levels; indices 0..4 are the action labels."""

    levels: tuple[float, ...] = (-0.2, -0.1, 0.0, 0.1, 0.2)

    def __post_init__(self):
        if len(self.levels) != 5:
            raise ValueError("exactly five acceleration levels required")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("acceleration levels must be strictly increasing")
        if self.levels[2] != 0.0:
            raise ValueError("middle acceleration level must be exactly 0")
        for lo, hi in zip(self.levels[:2], reversed(self.levels[3:])):
            if abs(lo + hi) > 1e-12:
                raise ValueError("acceleration levels must be symmetric about 0")

    @property
    def n(self) -> int:
        return len(self.levels)

    def closest_index(self, delta: float) -> int:
        """Index of the level closest to ``delta``; ties go to the lower index."""
        best, best_err = 0, abs(self.levels[0] - delta)
        for i in range(1, len(self.levels)):
            err = abs(self.levels[i] - delta)
            if err < best_err:
                best, best_err = i, err
        return best


@dataclass(frozen=True)
class SimParams:
    """Physical constants of the MDP."""

    dt: float = 1.0
    v_max: float = 1.0
    vehicle_len: float = 2.0       # same-loop gaps below this collide
    junction_window: float = 2.0   # arc radius around a junction endpoint
    stall_speed: float = 1e-6
    stall_window: int = 20
    placement_gap: float = 4.0     # min same-loop gap at placement time
    placement_junction_clearance: float = 3.0  # min arc distance to any endpoint
    placement_retries: int = 10000


class VehicleState(NamedTuple):
    loop: int
    pos: float
    speed: float


@dataclass(frozen=True)
class MarkovState:
    vehicles: tuple[VehicleState, ...]
    time: int = 0

    def speeds(self) -> tuple[float, ...]:
        return tuple(v.speed for v in self.vehicles)

    def all_stopped(self, eps: float) -> bool:
        return all(v.speed < eps for v in self.vehicles)


def step(state: MarkovState, actions: Sequence[int], topology: TrackTopology,
         action_space: ActionSpace = ActionSpace(),
         params: SimParams = SimParams()) -> MarkovState:
    """Advance all vehicles one timestep under the given joint action."""
    if len(actions) != len(state.vehicles):
        raise ValueError("one action per vehicle required")
    new_vehicles = []
    for veh, a in zip(state.vehicles, actions):
        if not 0 <= a < action_space.n:
            raise ValueError(f"action index {a} out of range 0..{action_space.n - 1}")
        speed = min(max(veh.speed + action_space.levels[a], 0.0), params.v_max)
        length = topology.loop_length(veh.loop)
        pos = (veh.pos + speed * params.dt) % length
        new_vehicles.append(VehicleState(veh.loop, pos, speed))
    return MarkovState(vehicles=tuple(new_vehicles), time=state.time + 1)


def detect_collisions(state: MarkovState, topology: TrackTopology,
                      params: SimParams = SimParams()) -> list[tuple[int, int]]:
    """All colliding vehicle pairs: same-loop tailgating and junction overlaps."""
    pairs: set[tuple[int, int]] = set()
    by_loop: dict[int, list[tuple[float, int]]] = {}
    for i, veh in enumerate(state.vehicles):
        by_loop.setdefault(veh.loop, []).append((veh.pos, i))
    for loop_idx, entries in by_loop.items():
        if len(entries) < 2:
            continue
        entries.sort()
        length = topology.loop_length(loop_idx)
        for k, (pos, i) in enumerate(entries):
            nxt_pos, j = entries[(k + 1) % len(entries)]
            gap = (nxt_pos - pos) % length
            if len(entries) > 1 and gap < params.vehicle_len:
                pairs.add((min(i, j), max(i, j)))
    for junction in topology.junctions:
        near = []
        for side in (0, 1):
            loop_idx, ep_pos = junction.endpoint(side)
            near.append([i for i, veh in enumerate(state.vehicles)
                         if veh.loop == loop_idx
                         and topology.arc_distance(loop_idx, veh.pos, ep_pos)
                         < params.junction_window])
        for i in near[0]:
            for j in near[1]:
                if i != j:
                    pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


def detect_stall(states: Sequence[MarkovState],
                 params: SimParams = SimParams()) -> bool:
    """True iff every vehicle is stopped in each of the last ``stall_window`` states."""
    if len(states) < params.stall_window:
        return False
    return all(s.all_stopped(params.stall_speed)
               for s in states[-params.stall_window:])


class JunctionRef(NamedTuple):
    """A specific endpoint of a junction, resolvable to (loop, pos)."""

    junction: int
    side: int
    loop: int
    pos: float


def next_junction_ahead(state: MarkovState, topology: TrackTopology,
                        vehicle: int) -> JunctionRef | None:
    """Nearest junction endpoint strictly ahead of the vehicle on its loop."""
    veh = state.vehicles[vehicle]
    endpoints = topology.endpoints_by_loop[veh.loop]
    if not endpoints:
        return None
    length = topology.loop_length(veh.loop)
    best = None
    for pos, ji, side in endpoints:
        d = (pos - veh.pos) % length
        if d == 0.0:
            d = length  # sitting exactly on an endpoint: it is behind, not ahead
        key = (d, ji, side)
        if best is None or key < best[0]:
            best = (key, JunctionRef(ji, side, veh.loop, pos))
    return best[1]


def twin_endpoint(topology: TrackTopology, ref: JunctionRef) -> JunctionRef:
    """The partner endpoint of a junction (the same physical point on the other loop)."""
    other = 1 - ref.side
    loop_idx, pos = topology.junctions[ref.junction].endpoint(other)
    return JunctionRef(ref.junction, other, loop_idx, pos)


def _anchor_loop_pos(state: MarkovState, anchor: int | tuple[int, float] | JunctionRef
                     ) -> tuple[int, float, int | None]:
    if isinstance(anchor, JunctionRef):
        return anchor.loop, anchor.pos, None
    if isinstance(anchor, tuple):
        return int(anchor[0]), float(anchor[1]), None
    veh = state.vehicles[anchor]
    return veh.loop, veh.pos, anchor


def next_vehicle_ahead(state: MarkovState, topology: TrackTopology,
                       anchor: int | tuple[int, float] | JunctionRef) -> int | None:
    """Vehicle with minimal strictly-positive forward distance from the anchor.

    A vehicle anchor never returns itself; coincident candidates resolve to
    the lower vehicle index.
    """
    return _next_vehicle(state, topology, anchor, forward=True)


def next_vehicle_behind(state: MarkovState, topology: TrackTopology,
                        anchor: int | tuple[int, float] | JunctionRef) -> int | None:
    """Vehicle with minimal strictly-positive backward distance from the anchor."""
    return _next_vehicle(state, topology, anchor, forward=False)


def _next_vehicle(state: MarkovState, topology: TrackTopology,
                  anchor, forward: bool) -> int | None:
    loop_idx, pos, self_idx = _anchor_loop_pos(state, anchor)
    length = topology.loop_length(loop_idx)
    best = None
    for i, veh in enumerate(state.vehicles):
        if veh.loop != loop_idx or i == self_idx:
            continue
        d = (veh.pos - pos) % length if forward else (pos - veh.pos) % length
        if d == 0.0:
            d = length  # coincident with the anchor point: a full lap away
        key = (d, i)
        if best is None or key < best[0]:
            best = (key, i)
    return None if best is None else best[1]


Termination = str  # "ran-to-limit" | "collision" | "stall"


@dataclass
class EpisodeHistory:
    """States and joint actions of one episode.

    ``records[t]`` pairs state ``s_t`` with the joint action taken from it;
    the final record carries the terminal state and ``None`` actions.
    """

    records: list[tuple[MarkovState, tuple[int, ...] | None]]
    termination: Termination
    seed: int
    topology_name: str = ""

    @property
    def steps(self) -> int:
        """Number of transitions taken (time index of the final state)."""
        return len(self.records) - 1

    def decision_records(self) -> list[tuple[MarkovState, tuple[int, ...]]]:
        return [(s, a) for s, a in self.records if a is not None]

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for state, actions in self.records:
                rec: dict = {
                    "t": state.time,
                    "vehicles": [[v.loop, v.pos, v.speed] for v in state.vehicles],
                }
                if actions is not None:
                    rec["actions"] = list(actions)
                else:
                    rec["termination"] = self.termination
                    rec["seed"] = self.seed
                    rec["topology"] = self.topology_name
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "EpisodeHistory":
        records: list[tuple[MarkovState, tuple[int, ...] | None]] = []
        termination, seed, topo = "ran-to-limit", 0, ""
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                state = MarkovState(
                    vehicles=tuple(VehicleState(int(l), float(p), float(s))
                                   for l, p, s in rec["vehicles"]),
                    time=int(rec["t"]))
                if "actions" in rec:
                    records.append((state, tuple(int(a) for a in rec["actions"])))
                else:
                    termination = rec.get("termination", "ran-to-limit")
                    seed = int(rec.get("seed", 0))
                    topo = rec.get("topology", "")
                    records.append((state, None))
        return cls(records=records, termination=termination, seed=seed,
                   topology_name=topo)


Policy = Callable[[MarkovState, TrackTopology, int], int]


def place_vehicles(topology: TrackTopology, n_vehicles: int,
                   rng: np.random.Generator,
                   params: SimParams = SimParams()) -> MarkovState:
    """Random non-overlapping placement, all speeds zero.

    Vehicles are placed one at a time: loop chosen with probability
    proportional to length, position uniform, resampled until the vehicle
    keeps ``placement_gap`` to others on its loop and stays clear of every
    junction endpoint on its loop.
    """
    lengths = np.array([loop.length for loop in topology.loops])
    weights = lengths / lengths.sum()
    for _ in range(max(1, params.placement_retries // 100)):
        placed: list[VehicleState] = []
        while len(placed) < n_vehicles:
            for _ in range(100):
                loop_idx = int(rng.choice(len(topology.loops), p=weights))
                pos = float(rng.uniform(0.0, lengths[loop_idx]))
                ok = all(topology.arc_distance(loop_idx, pos, ep_pos)
                         >= params.placement_junction_clearance
                         for ep_pos, _, _ in topology.endpoints_by_loop[loop_idx])
                if ok:
                    ok = all(veh.loop != loop_idx
                             or topology.arc_distance(loop_idx, pos, veh.pos)
                             >= params.placement_gap
                             for veh in placed)
                if ok:
                    placed.append(VehicleState(loop_idx, pos, 0.0))
                    break
            else:
                break  # dead end: restart the whole configuration
        if len(placed) == n_vehicles:
            state = MarkovState(vehicles=tuple(placed), time=0)
            if not detect_collisions(state, topology, params):
                return state
    raise RuntimeError(
        f"could not place {n_vehicles} vehicles on topology "
        f"{topology.name!r} after {params.placement_retries} attempts")


def run_episode(topology: TrackTopology, policy: Policy, n_vehicles: int,
                max_steps: int, seed: int,
                action_space: ActionSpace = ActionSpace(),
                params: SimParams = SimParams()) -> EpisodeHistory:
    """Roll out one seeded episode, stopping at collision, stall, or the limit."""
    rng = np.random.default_rng(seed)
    reset = getattr(policy, "reset_episode", None)
    if reset is not None:
        reset(seed)
    state = place_vehicles(topology, n_vehicles, rng, params)
    records: list[tuple[MarkovState, tuple[int, ...] | None]] = []
    termination: Termination = "ran-to-limit"
    stopped_run = 0
    for _ in range(max_steps):
        actions = tuple(policy(state, topology, i) for i in range(n_vehicles))
        records.append((state, actions))
        state = step(state, actions, topology, action_space, params)
        if detect_collisions(state, topology, params):
            termination = "collision"
            break
        stopped_run = stopped_run + 1 if state.all_stopped(params.stall_speed) else 0
        if stopped_run >= params.stall_window:
            termination = "stall"
            break
    records.append((state, None))
    return EpisodeHistory(records=records, termination=termination, seed=seed,
                          topology_name=topology.name)
