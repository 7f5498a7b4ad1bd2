"""Target controllers and reference state representations.

Two hand-coded controllers serve as imitation targets.  Both act on local
views of the Markov state and emit one of five acceleration levels:

* :class:`RuleTreePolicy` is a fixed threshold rule table over exactly six
  scalar features of the junction contest (see :func:`contest_features`).
  It is literally a binary decision tree, so it can in principle be
  recovered exactly by tree induction.
* :class:`ProportionalPolicy` tracks a continuous target speed derived
  from the tightest of several spacing constraints (leading vehicle plus a
  junction branch that watches the two nearest rivals).  Its decision
  boundaries are oblique, so no finite threshold tree reproduces it
  exactly.

The module also hosts the egocentric-geometry representation used as a
domain-knowledge-free baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulator import (ActionSpace, MarkovState, SimParams, next_junction_ahead,
                        next_vehicle_ahead, next_vehicle_behind, twin_endpoint)
from .topology import TrackTopology

CONTEST_FEATURE_NAMES = (
    "speed(ego)",
    "sep(pos(fj(ego)),pos(ego))",
    "sep(pos(twin(fj(ego))),pos(ba(twin(fj(ego)))))",
    "sub(sep(pos(fj(ego)),pos(ego)),sep(pos(twin(fj(ego))),pos(ba(twin(fj(ego))))))",
    "speed(ba(twin(fj(ego))))",
    "sep(pos(fa(ego)),pos(ego))",
)


def contest_features(state: MarkovState, topology: TrackTopology, ego: int
                     ) -> tuple[float, float, float, float, float, float]:
    """The six handcrafted features the fully-imitable target acts on.

    Returns (ego speed, ego distance to next junction, rival distance to the
    junction via its twin endpoint, difference of those distances, rival
    speed, gap to the nearest vehicle ahead).  Missing entities use the
    sentinel rules: absent rival speed is 0 and absent separations equal the
    ego loop length, i.e. "far away and stationary".
    """
    veh = state.vehicles[ego]
    sentinel = topology.loop_length(veh.loop)
    v = veh.speed
    jref = next_junction_ahead(state, topology, ego)
    if jref is None:
        dj = sentinel
        dc, vc = sentinel, 0.0
    else:
        dj = topology.forward_distance(veh.loop, veh.pos, jref.pos)
        if dj == 0.0:
            dj = sentinel  # strictly-ahead semantics: on the point means a full lap
        twin = twin_endpoint(topology, jref)
        rival = next_vehicle_behind(state, topology, twin)
        if rival is None:
            dc, vc = sentinel, 0.0
        else:
            rveh = state.vehicles[rival]
            dc = topology.forward_distance(rveh.loop, rveh.pos, twin.pos)
            if dc == 0.0:
                dc = topology.loop_length(rveh.loop)
            vc = rveh.speed
    lead = next_vehicle_ahead(state, topology, ego)
    if lead is None:
        da = sentinel
    else:
        da = topology.forward_distance(veh.loop, veh.pos, state.vehicles[lead].pos)
        if da == 0.0:
            da = sentinel
    return (v, dj, dc, dj - dc, vc, da)


@dataclass(frozen=True)
class RuleThresholds:
    """Knobs of the rule table, in track units or track units per step."""

    horizon: float = 14.0         # junction matters only within this distance
    creep_onset: float = 12.0     # losing closer than this: slow down
    hold_line: float = 6.0        # where a contest loser parks
    guard_brake: float = 3.2      # leader gap below which braking is mandatory
    guard_follow: float = 5.2     # leader gap below which speed is matched
    match_low: float = 0.4        # follow-mode speed band near a junction
    match_high: float = 0.55
    match_low_far: float = 0.55   # follow-mode speed band in open track
    match_high_far: float = 0.75
    creep_speed: float = 0.45     # approach speed while queued for a junction
    creep_speed_blocked: float = 0.25  # slower approach when the rival crawls
    rival_slow: float = 0.2       # rival speed that counts as "crawling"
    cruise_speed: float = 1.0


# Tree node encoding used by the rule table: ("leaf", action) or
# (feature index, threshold, left, right) with "value < threshold -> left".
RuleNode = tuple


def build_rule_table(th: RuleThresholds = RuleThresholds()) -> RuleNode:
    """The rule table as an explicit threshold tree over the six features.

    Behavioural summary:

    * The car-following guard dominates everywhere: hard-brake inside the
      emergency gap, match pace inside the follow gap.  Queues behind a
      blocked junction form from this guard alone, so no vehicle needs to
      see past its leader.  The matching band is slower near a junction
      than in open track, so fresh crossers clear the junction window
      briskly instead of dawdling invisibly in it.
    * No junction within the horizon, or the contest is won (ego strictly
      closer to the shared point than its rival): cruise under the guard.
    * Losing the contest: cruise until reasonably close, then approach
      slowly, slower still when the rival is crawling, and park at the
      hold line.  A distance tie counts as losing for both, which can
      only stall.
    """
    a0, a1, a2, a3, a4 = (("leaf", k) for k in range(5))
    cruise: RuleNode = (0, th.cruise_speed, a4, a2)

    def guarded(match_low: float, match_high: float) -> RuleNode:
        matching: RuleNode = (0, match_low, a3, (0, match_high, a2, a0))
        return (5, th.guard_brake, a0, (5, th.guard_follow, matching, cruise))

    guard_near = guarded(th.match_low, th.match_high)
    guard_far = guarded(th.match_low_far, th.match_high_far)

    def creep(speed: float) -> RuleNode:
        return (0, speed, a3, a1)

    near_matching: RuleNode = (0, th.match_low, a3, (0, th.match_high, a2, a0))
    approach: RuleNode = (5, th.guard_brake, a0,
                          (5, th.guard_follow, near_matching,
                           (4, th.rival_slow,
                            creep(th.creep_speed_blocked),
                            creep(th.creep_speed))))
    losing: RuleNode = (1, th.hold_line, a0,
                        (1, th.creep_onset, approach, guard_far))
    winning: RuleNode = (1, th.creep_onset, guard_near, guard_far)
    contested: RuleNode = (3, 0.0, winning, losing)
    return (1, th.horizon, contested, guard_far)


def rule_table_leaves(node: RuleNode) -> int:
    if node[0] == "leaf":
        return 1
    return rule_table_leaves(node[2]) + rule_table_leaves(node[3])


def eval_rule_table(node: RuleNode, features: tuple[float, ...]) -> int:
    while node[0] != "leaf":
        idx, threshold, left, right = node
        node = left if features[idx] < threshold else right
    return node[1]


@dataclass
class RuleTreePolicy:
    """Fully-imitable target: a threshold rule table over the six contest features."""

    thresholds: RuleThresholds = field(default_factory=RuleThresholds)

    def __post_init__(self):
        self._table = build_rule_table(self.thresholds)

    @property
    def table(self) -> RuleNode:
        return self._table

    @property
    def leaf_count(self) -> int:
        return rule_table_leaves(self._table)

    def __call__(self, state: MarkovState, topology: TrackTopology, ego: int) -> int:
        return eval_rule_table(self._table, contest_features(state, topology, ego))


@dataclass
class ProportionalPolicy:
    """Partially-imitable target: proportional speed control toward the
    tightest spacing constraint.

    The effective headway is the minimum of the raw gap to the leading
    vehicle and a junction branch.  The junction branch activates when a
    rival approaching the twin endpoint is closer to the junction than ego;
    each additional close rival (up to ``rivals_considered``) pushes the
    hold point back by ``rival_clearance``.  The commanded level is the one
    closest to the speed error, ties resolving to the lower index.
    """

    gain: float = 0.25
    safe_distance: float = 4.0
    rivals_considered: int = 2
    rival_clearance: float = 3.0
    action_space: ActionSpace = field(default_factory=ActionSpace)
    params: SimParams = field(default_factory=SimParams)

    def target_speed(self, state: MarkovState, topology: TrackTopology, ego: int) -> float:
        veh = state.vehicles[ego]
        d_eff = math.inf
        lead = next_vehicle_ahead(state, topology, ego)
        if lead is not None:
            d_eff = topology.forward_distance(veh.loop, veh.pos,
                                              state.vehicles[lead].pos)
        jref = next_junction_ahead(state, topology, ego)
        if jref is not None:
            dj = topology.forward_distance(veh.loop, veh.pos, jref.pos)
            if dj == 0.0:
                dj = topology.loop_length(veh.loop)
            twin = twin_endpoint(topology, jref)
            n_closer = 0
            anchor: object = twin
            for _ in range(self.rivals_considered):
                rival = next_vehicle_behind(state, topology, anchor)
                if rival is None or rival == ego:
                    break
                rveh = state.vehicles[rival]
                d_rival = topology.forward_distance(rveh.loop, rveh.pos, twin.pos)
                if d_rival == 0.0:
                    d_rival = topology.loop_length(rveh.loop)
                if d_rival < dj:
                    n_closer += 1
                anchor = (rveh.loop, rveh.pos)
            if n_closer > 0:
                d_junature = (dj - self.params.junction_window
                              - self.rival_clearance * (n_closer - 1))
                d_eff = min(d_eff, d_junature)
        v_star = self.gain * (d_eff - self.safe_distance)
        return min(max(v_star, 0.0), self.params.v_max)

    def __call__(self, state: MarkovState, topology: TrackTopology, ego: int) -> int:
        v_star = self.target_speed(state, topology, ego)
        delta = v_star - state.vehicles[ego].speed
        return self.action_space.closest_index(delta)


@dataclass
class RandomPolicy:
    """Uniform random actions; reseeded per episode for reproducibility."""

    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def reset_episode(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def __call__(self, state: MarkovState, topology: TrackTopology, ego: int) -> int:
        return int(self._rng.integers(0, 5))


@dataclass(frozen=True)
class ConstantPolicy:
    """Always the same action index (handy for kinematics and stall tests)."""

    action: int = 0

    def __call__(self, state: MarkovState, topology: TrackTopology, ego: int) -> int:
        return self.action


def egocentric_feature_names(k: int) -> tuple[str, ...]:
    names = []
    for rank in range(1, k + 1):
        names.extend([f"radius_{rank}", f"bearing_{rank}",
                      f"ray_speed_{rank}", f"rel_heading_{rank}"])
    return tuple(names)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def egocentric_features(state: MarkovState, topology: TrackTopology, ego: int,
                        k: int = 4) -> tuple[float, ...]:
    """Egocentric geometry of the ``k`` nearest other vehicles.

    Per neighbour, nearest first: straight-line distance, bearing relative
    to the ego heading, the neighbour's velocity component along the
    ego-to-neighbour ray (positive means receding), and heading relative to
    the ego heading.  Missing neighbours pad with (max loop length, 0, 0, 0).
    """
    ev = state.vehicles[ego]
    emb = topology.loops[ev.loop].embedding
    ex, ey, eh = emb.point_and_heading(ev.pos)
    ranked: list[tuple[float, int, float, float, float, float]] = []
    for i, veh in enumerate(state.vehicles):
        if i == ego:
            continue
        oemb = topology.loops[veh.loop].embedding
        ox, oy, oh = oemb.point_and_heading(veh.pos)
        dx, dy = ox - ex, oy - ey
        radius = math.hypot(dx, dy)
        if radius > 0.0:
            ux, uy = dx / radius, dy / radius
            bearing = _wrap_angle(math.atan2(dy, dx) - eh)
        else:
            ux, uy = math.cos(oh), math.sin(oh)
            bearing = 0.0
        ray_speed = veh.speed * (math.cos(oh) * ux + math.sin(oh) * uy)
        ranked.append((radius, i, bearing, ray_speed, _wrap_angle(oh - eh), 0.0))
    ranked.sort(key=lambda t: (t[0], t[1]))
    out: list[float] = []
    sentinel = topology.max_loop_length
    for rank in range(k):
        if rank < len(ranked):
            radius, _, bearing, ray_speed, rel_heading, _ = ranked[rank]
            out.extend([radius, bearing, ray_speed, rel_heading])
        else:
            out.extend([sentinel, 0.0, 0.0, 0.0])
    return tuple(out)


@dataclass(frozen=True)
class PolicySpec:
    """Config-level description of a controller."""

    kind: str  # fully-imitable | partially-imitable | tree-model | random
    parameters: dict = field(default_factory=dict)

    def build(self, action_space: ActionSpace = ActionSpace(),
              params: SimParams = SimParams()):
        if self.kind == "fully-imitable":
            th = RuleThresholds(**self.parameters) if self.parameters else RuleThresholds()
            return RuleTreePolicy(thresholds=th)
        if self.kind == "partially-imitable":
            return ProportionalPolicy(action_space=action_space, params=params,
                                      **self.parameters)
        if self.kind == "random":
            return RandomPolicy(**self.parameters)
        raise ValueError(f"unknown policy kind {self.kind!r}")
