"""Candidate state features built by composing typed track queries.

Features are closed terms over eight primitive operations, rooted at the
``ego`` vehicle symbol:

======  ==========================  =======================================
op      signature                   meaning
======  ==========================  =======================================
pos     vehicle|junction -> position  arc position of an entity
speed   vehicle -> speed              current speed of a vehicle
fj      vehicle -> junction           next junction ahead of a vehicle
fa      vehicle|junction -> vehicle   next vehicle ahead of the anchor
ba      vehicle|junction -> vehicle   next vehicle behind the anchor
twin    junction -> junction          the paired endpoint of a junction
sep     (position, position) -> separation   forward arc distance (2nd to 1st)
sub     (speed, speed) -> delta       difference of speeds
        (separation, separation) -> delta    or of separations
======  ==========================  =======================================

A term's depth is its maximum operation nesting; only scalar-sorted terms
(speed, separation, delta) qualify as features.  Evaluation totalizes
missing entities with sentinels: an absent vehicle has speed 0 and any
separation involving an absent entity or two different loops equals the
ego loop length ("far away and stationary").

Enumerating every well-sorted term is hopeless (the count explodes past a
million before depth six), so :func:`enumerate_features` generates a
documented sub-grammar: free entity chains without twin-twin stutters,
separations along a chain and its extension, ego-anchored speed
differences, and junction-contest distance differences.  The sub-grammar
keeps the six handcrafted features and everything the shipped controllers
consult.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .simulator import (JunctionRef, MarkovState, next_junction_ahead,
                        next_vehicle_ahead, next_vehicle_behind, twin_endpoint)
from .topology import TrackTopology

VEHICLE = "vehicle"
JUNCTION = "junction"
POSITION = "position"
SPEED = "speed"
SEPARATION = "separation"
DELTA = "delta"

SCALAR_SORTS = frozenset({SPEED, SEPARATION, DELTA})

# op -> list of (input sorts, output sort); overloads listed together
OPERATION_SIGNATURES: dict[str, tuple[tuple[tuple[str, ...], str], ...]] = {
    "pos": (((VEHICLE,), POSITION), ((JUNCTION,), POSITION)),
    "speed": (((VEHICLE,), SPEED),),
    "fj": (((VEHICLE,), JUNCTION),),
    "fa": (((VEHICLE,), VEHICLE), ((JUNCTION,), VEHICLE)),
    "ba": (((VEHICLE,), VEHICLE), ((JUNCTION,), VEHICLE)),
    "twin": (((JUNCTION,), JUNCTION),),
    "sep": (((POSITION, POSITION), SEPARATION),),
    "sub": (((SPEED, SPEED), DELTA), ((SEPARATION, SEPARATION), DELTA)),
}

EGO = "ego"


@dataclass(frozen=True)
class FeatureExpr:
    """A closed, well-sorted term; leaves are the ego symbol."""

    op: str
    args: tuple["FeatureExpr", ...] = ()
    sort: str = VEHICLE
    depth: int = 0

    def __str__(self) -> str:
        if not self.args and self.op == EGO:
            return EGO
        return f"{self.op}({','.join(str(a) for a in self.args)})"

    @property
    def is_scalar(self) -> bool:
        return self.sort in SCALAR_SORTS


_EGO_EXPR = FeatureExpr(op=EGO)


def ego() -> FeatureExpr:
    return _EGO_EXPR


def apply(op: str, *args: FeatureExpr) -> FeatureExpr:
    """Build ``op(args...)``, checking arity and argument sorts."""
    sigs = OPERATION_SIGNATURES.get(op)
    if sigs is None:
        raise ValueError(f"unknown operation {op!r}")
    in_sorts = tuple(a.sort for a in args)
    for sig_in, sig_out in sigs:
        if sig_in == in_sorts:
            return FeatureExpr(op=op, args=tuple(args), sort=sig_out,
                               depth=1 + max(a.depth for a in args))
    raise ValueError(f"{op} is not applicable to sorts {in_sorts}")


def parse(text: str) -> FeatureExpr:
    """Parse a canonical rendering back into a checked term."""
    text = text.strip()
    pos_ = 0

    def parse_term() -> FeatureExpr:
        nonlocal pos_
        start = pos_
        while pos_ < len(text) and (text[pos_].isalnum() or text[pos_] == "_"):
            pos_ += 1
        name = text[start:pos_]
        if not name:
            raise ValueError(f"expected a name at offset {start} in {text!r}")
        if pos_ < len(text) and text[pos_] == "(":
            pos_ += 1
            args = [parse_term()]
            while pos_ < len(text) and text[pos_] == ",":
                pos_ += 1
                args.append(parse_term())
            if pos_ >= len(text) or text[pos_] != ")":
                raise ValueError(f"unbalanced parentheses in {text!r}")
            pos_ += 1
            return apply(name, *args)
        if name != EGO:
            raise ValueError(f"unknown leaf {name!r} in {text!r}")
        return ego()

    expr = parse_term()
    if pos_ != len(text):
        raise ValueError(f"trailing input at offset {pos_} in {text!r}")
    return expr


def handcrafted_features() -> tuple[FeatureExpr, ...]:
    """The six features the fully-imitable controller acts on."""
    from .policies import CONTEST_FEATURE_NAMES
    return tuple(parse(name) for name in CONTEST_FEATURE_NAMES)


def _entity_chains(max_hops: int) -> list[FeatureExpr]:
    """Sort-valid chains over {fa, ba, fj, twin} from ego, no twin-twin."""
    chains: list[FeatureExpr] = [ego()]
    frontier: list[FeatureExpr] = [ego()]
    for _ in range(max_hops):
        nxt: list[FeatureExpr] = []
        for e in frontier:
            if e.sort == VEHICLE:
                ops = ("fa", "ba", "fj")
            else:
                ops = ("fa", "ba") if e.op == "twin" else ("fa", "ba", "twin")
            for op in ops:
                nxt.append(apply(op, e))
        chains.extend(nxt)
        frontier = nxt
    return chains


def _suffix_pairs(chains: Sequence[FeatureExpr]) -> Iterator[tuple[FeatureExpr, FeatureExpr]]:
    """(chain, proper sub-chain) pairs: one entity derived from the other."""
    for chain in chains:
        sub = chain
        while sub.args:
            sub = sub.args[0]
            yield chain, sub


@dataclass(frozen=True)
class FeatureSet:
    """Ordered, deduplicated features plus provenance."""

    exprs: tuple[FeatureExpr, ...]
    depth_limit: int

    def __post_init__(self):
        seen = set()
        for e in self.exprs:
            s = str(e)
            if s in seen:
                raise ValueError(f"duplicate feature {s}")
            seen.add(s)

    def __len__(self) -> int:
        return len(self.exprs)

    def __iter__(self) -> Iterator[FeatureExpr]:
        return iter(self.exprs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(str(e) for e in self.exprs)

    def to_json(self) -> dict:
        return {"depth_limit": self.depth_limit, "features": list(self.names)}

    @classmethod
    def from_json(cls, data: dict) -> "FeatureSet":
        return cls(exprs=tuple(parse(s) for s in data["features"]),
                   depth_limit=int(data["depth_limit"]))


def enumerate_features(depth_limit: int) -> FeatureSet:
    """Generate the candidate feature set for the given depth limit.

    Deterministic: sorted by (depth, canonical string).  Monotone in the
    depth limit, and from depth six onward it contains all six handcrafted
    features (the contest distance difference needs the full six levels).
    """
    if depth_limit < 1:
        raise ValueError("depth limit must be at least 1")
    chain_cap = 4  # entity chains saturate here; deeper ones add no new queries
    speed_hops = min(chain_cap, depth_limit - 1)
    sep_hops = min(chain_cap, depth_limit - 2)

    out: list[FeatureExpr] = []
    speed_subjects = [c for c in _entity_chains(speed_hops) if c.sort == VEHICLE]
    speeds = {str(c): apply("speed", c) for c in speed_subjects}
    out.extend(speeds.values())

    if depth_limit >= 2:
        # ego-anchored speed differences; sub(speed(ego), speed(ego)) is kept
        # deliberately: deduplication is syntactic, never algebraic
        for c in speed_subjects:
            if c.depth <= depth_limit - 2:
                out.append(apply("sub", apply("speed", ego()), apply("speed", c)))

    if depth_limit >= 3:
        sep_chains = _entity_chains(sep_hops)
        for a, b in _suffix_pairs(sep_chains):
            out.append(apply("sep", apply("pos", a), apply("pos", b)))
            out.append(apply("sep", apply("pos", b), apply("pos", a)))

    if depth_limit >= 6:
        # junction-contest differences: my approach to a junction versus the
        # rival's approach to its twin
        for j in _entity_chains(depth_limit - 5):
            if j.sort != JUNCTION or j.op == "twin":
                continue
            mine = apply("sep", apply("pos", j), apply("pos", ego()))
            twin = apply("twin", j)
            for probe in ("fa", "ba"):
                theirs = apply("sep", apply("pos", twin),
                               apply("pos", apply(probe, twin)))
                out.append(apply("sub", mine, theirs))

    dedup: dict[str, FeatureExpr] = {}
    for e in out:
        dedup.setdefault(str(e), e)
    ordered = sorted(dedup.values(), key=lambda e: (e.depth, str(e)))
    return FeatureSet(exprs=tuple(ordered), depth_limit=depth_limit)


class FeatureEvaluator:
    """Evaluates a feature set against states, sharing common subterms.

    Entity-valued subterms resolve to simulator queries; missing entities
    become ``None`` and scalar sentinels are applied at the leaves of the
    scalar layer.  One instance may be reused across states and egos.
    """

    def __init__(self, features: Sequence[FeatureExpr]):
        self.features = tuple(features)
        self._order: list[FeatureExpr] = []
        seen: dict[int, FeatureExpr] = {}

        def visit(e: FeatureExpr) -> None:
            if id(e) in seen:
                return
            for a in e.args:
                visit(a)
            seen[id(e)] = e
            self._order.append(e)

        for e in self.features:
            visit(e)

    def evaluate(self, state: MarkovState, topology: TrackTopology, ego_idx: int
                 ) -> list[float]:
        sentinel = topology.loop_length(state.vehicles[ego_idx].loop)
        values: dict[int, object] = {}
        for e in self._order:
            values[id(e)] = self._eval_node(e, values, state, topology,
                                            ego_idx, sentinel)
        return [float(values[id(f)]) for f in self.features]

    @staticmethod
    def _entity_pos(entity, state: MarkovState) -> tuple[int, float] | None:
        if entity is None:
            return None
        if isinstance(entity, JunctionRef):
            return (entity.loop, entity.pos)
        veh = state.vehicles[entity]
        return (veh.loop, veh.pos)

    def _eval_node(self, e: FeatureExpr, values: dict, state: MarkovState,
                   topology: TrackTopology, ego_idx: int, sentinel: float):
        if e.op == EGO:
            return ego_idx
        a = values[id(e.args[0])] if e.args else None
        if e.op == "speed":
            return 0.0 if a is None else state.vehicles[a].speed
        if e.op == "fj":
            return None if a is None else next_junction_ahead(state, topology, a)
        if e.op == "fa":
            return None if a is None else next_vehicle_ahead(state, topology, a)
        if e.op == "ba":
            return None if a is None else next_vehicle_behind(state, topology, a)
        if e.op == "twin":
            return None if a is None else twin_endpoint(topology, a)
        if e.op == "pos":
            return self._entity_pos(a, state)
        b = values[id(e.args[1])]
        if e.op == "sep":
            if a is None or b is None or a[0] != b[0]:
                return sentinel
            d = topology.forward_distance(a[0], b[1], a[1])
            return topology.loop_length(a[0]) if d == 0.0 and a != b else d
        if e.op == "sub":
            return a - b
        raise ValueError(f"unknown operation {e.op!r}")


def evaluate_matrix(features: FeatureSet | Sequence[FeatureExpr],
                    history, topology: TrackTopology
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and action labels for every (decision step, vehicle).

    Row order is time-major then vehicle index; columns follow the feature
    set order.
    """
    exprs = tuple(features)
    evaluator = FeatureEvaluator(exprs)
    rows: list[list[float]] = []
    labels: list[int] = []
    for state, actions in history.decision_records():
        for i in range(len(state.vehicles)):
            rows.append(evaluator.evaluate(state, topology, i))
            labels.append(actions[i])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(exprs))
    y = np.array(labels, dtype=np.int64)
    return X, y
