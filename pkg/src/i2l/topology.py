"""Track topologies: loops, junctions, presets, and JSON persistence.

A topology is a set of directed loops (closed curves traversed in the
direction of increasing arc position) plus junctions.  A junction is a pair
of arc positions on (usually distinct) loops that map to the same 2D point;
vehicles near both sides of the pair can collide.

The five shipped presets, named ``A`` through ``E``, grade from small/simple
to large/complex:

========  =====  =========  ============
name      loops  junctions  total length
========  =====  =========  ============
A         2      2          120
B         2      3          180
C         3      4          230
D         4      8          480
E         3      6          252
========  =====  =========  ============
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .geometry import LoopEmbedding, stadium

COINCIDENCE_TOL = 1e-9


@dataclass(frozen=True)
class Loop:
    length: float
    embedding: LoopEmbedding

    def to_json(self) -> dict:
        return {"length": self.length, "embedding": self.embedding.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "Loop":
        return cls(length=float(data["length"]),
                   embedding=LoopEmbedding.from_json(data["embedding"]))


@dataclass(frozen=True)
class Junction:
    """Paired track positions sharing one physical point.

    Each endpoint is (loop index, arc position).  ``other_side(side)`` is
    the flip used when a vehicle asks about traffic approaching the same
    physical point from the partner loop.
    """

    a: tuple[int, float]
    b: tuple[int, float]

    def endpoint(self, side: int) -> tuple[int, float]:
        return self.a if side == 0 else self.b

    def to_json(self) -> dict:
        return {"a": [self.a[0], self.a[1]], "b": [self.b[0], self.b[1]]}

    @classmethod
    def from_json(cls, data: dict) -> "Junction":
        return cls(a=(int(data["a"][0]), float(data["a"][1])),
                   b=(int(data["b"][0]), float(data["b"][1])))


@dataclass(frozen=True)
class TrackTopology:
    name: str
    loops: tuple[Loop, ...]
    junctions: tuple[Junction, ...]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for li, loop in enumerate(self.loops):
            if abs(loop.length - loop.embedding.length) > 1e-6:
                raise ValueError(
                    f"loop {li}: declared length {loop.length} does not match "
                    f"embedding length {loop.embedding.length}")
        seen: set[tuple[int, float]] = set()
        for ji, j in enumerate(self.junctions):
            for loop_idx, pos in (j.a, j.b):
                if not 0 <= loop_idx < len(self.loops):
                    raise ValueError(f"junction {ji}: loop index {loop_idx} out of range")
                if not 0.0 <= pos < self.loops[loop_idx].length:
                    raise ValueError(f"junction {ji}: arc position {pos} out of range")
            if j.a == j.b:
                raise ValueError(f"junction {ji}: endpoints must be distinct")
            seen.add(j.a)
            seen.add(j.b)
            pa = self.loops[j.a[0]].embedding.point(j.a[1])
            pb = self.loops[j.b[0]].embedding.point(j.b[1])
            if math.hypot(pa[0] - pb[0], pa[1] - pb[1]) > COINCIDENCE_TOL:
                raise ValueError(
                    f"junction {ji}: endpoints map to different 2D points "
                    f"{pa} vs {pb}")
        if len(seen) < 2 * len(self.junctions):
            raise ValueError("junction endpoints must occupy distinct (loop, position) pairs")

    @cached_property
    def endpoints_by_loop(self) -> tuple[tuple[tuple[float, int, int], ...], ...]:
        """Per loop: (arc position, junction index, side) sorted by position."""
        per_loop: list[list[tuple[float, int, int]]] = [[] for _ in self.loops]
        for ji, j in enumerate(self.junctions):
            per_loop[j.a[0]].append((j.a[1], ji, 0))
            per_loop[j.b[0]].append((j.b[1], ji, 1))
        return tuple(tuple(sorted(lst)) for lst in per_loop)

    @cached_property
    def max_loop_length(self) -> float:
        return max(loop.length for loop in self.loops)

    def loop_length(self, loop_idx: int) -> float:
        return self.loops[loop_idx].length

    def forward_distance(self, loop_idx: int, from_pos: float, to_pos: float) -> float:
        """Arc distance travelled going forward from ``from_pos`` to ``to_pos``."""
        return (to_pos - from_pos) % self.loops[loop_idx].length

    def arc_distance(self, loop_idx: int, p: float, q: float) -> float:
        """Undirected arc distance between two positions on one loop."""
        d = (q - p) % self.loops[loop_idx].length
        return min(d, self.loops[loop_idx].length - d)

    def min_junction_spacing(self) -> float:
        """Smallest arc gap between consecutive junction endpoints on any loop."""
        best = math.inf
        for li, eps in enumerate(self.endpoints_by_loop):
            if len(eps) < 2:
                continue
            length = self.loops[li].length
            for k in range(len(eps)):
                gap = (eps[(k + 1) % len(eps)][0] - eps[k][0]) % length
                best = min(best, gap)
        return best

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "loops": [loop.to_json() for loop in self.loops],
            "junctions": [j.to_json() for j in self.junctions],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrackTopology":
        return cls(
            name=str(data["name"]),
            loops=tuple(Loop.from_json(d) for d in data["loops"]),
            junctions=tuple(Junction.from_json(d) for d in data["junctions"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrackTopology":
        return cls.from_json(json.loads(Path(path).read_text()))


def _cross_junctions(loops: list[Loop], pairs: list[tuple[int, int, float, float]]
                     ) -> list[Junction]:
    """Build junctions from (loop_a, loop_b, x, y) shared 2D points."""
    out = []
    for la, lb, x, y in pairs:
        pa = loops[la].embedding.arc_position((x, y), tol=1e-7)
        pb = loops[lb].embedding.arc_position((x, y), tol=1e-7)
        out.append(Junction(a=(la, pa), b=(lb, pb)))
    return out


def _loop(length: float, cx: float, cy: float, radius: float,
          vertical: bool = False) -> Loop:
    return Loop(length=length,
                embedding=stadium(cx, cy, length, radius, vertical=vertical))


def _build_a() -> TrackTopology:
    loops = [
        _loop(60.0, 0.0, 0.0, 7.0),
        _loop(60.0, 7.5, 0.0, 4.0, vertical=True),
    ]
    junctions = _cross_junctions(loops, [
        (0, 1, 3.5, 7.0),
        (0, 1, 3.5, -7.0),
    ])
    return TrackTopology(name="A", loops=tuple(loops), junctions=tuple(junctions))


def _build_b() -> TrackTopology:
    r = 8.5
    main = _loop(100.0, 0.0, 0.0, r)
    half_span = 0.25 * (80.0 - 2.0 * math.pi * r)
    cy = -r + half_span + r  # bottom cap tangent to the main bottom straight
    side = _loop(80.0, 0.0, cy, r, vertical=True)
    loops = [main, side]
    junctions = _cross_junctions(loops, [
        (0, 1, -8.5, 8.5),
        (0, 1, 8.5, 8.5),
        (0, 1, 0.0, -8.5),  # tangency point
    ])
    return TrackTopology(name="B", loops=tuple(loops), junctions=tuple(junctions))


def _build_c() -> TrackTopology:
    loops = [
        _loop(92.0, 0.0, 0.0, 8.5),
        _loop(70.0, 13.9, 0.0, 5.0, vertical=True),
        _loop(70.0, -13.9, 0.0, 5.0, vertical=True),
    ]
    junctions = _cross_junctions(loops, [
        (0, 1, 8.9, 8.5),
        (0, 1, 8.9, -8.5),
        (0, 2, -8.9, 8.5),
        (0, 2, -8.9, -8.5),
    ])
    return TrackTopology(name="C", loops=tuple(loops), junctions=tuple(junctions))


def _build_d() -> TrackTopology:
    v_len = 88.0 + 12.0 * math.pi  # straights span 44, caps of radius 6
    loops = [
        _loop(120.0, 0.0, 0.0, 7.0),
        _loop(120.0, 0.0, 28.0, 7.0),
        _loop(v_len, 23.0, 14.0, 6.0, vertical=True),
        _loop(v_len, -23.0, 14.0, 6.0, vertical=True),
    ]
    junctions = _cross_junctions(loops, [
        (0, 2, 17.0, -7.0),
        (0, 2, 17.0, 7.0),
        (1, 2, 17.0, 21.0),
        (1, 2, 17.0, 35.0),
        (0, 3, -17.0, -7.0),
        (0, 3, -17.0, 7.0),
        (1, 3, -17.0, 21.0),
        (1, 3, -17.0, 35.0),
    ])
    return TrackTopology(name="D", loops=tuple(loops), junctions=tuple(junctions))


def _build_e() -> TrackTopology:
    loops = [
        _loop(130.0, 0.0, 0.0, 7.0),
        _loop(76.0, 0.0, 0.0, 7.0, vertical=True),
        _loop(70.0, 25.0, 0.0, 4.0, vertical=True),
    ]
    junctions = _cross_junctions(loops, [
        (0, 1, -7.0, -7.0),
        (0, 1, -7.0, 7.0),
        (0, 1, 7.0, -7.0),
        (0, 1, 7.0, 7.0),
        (0, 2, 21.0, -7.0),
        (0, 2, 21.0, 7.0),
    ])
    return TrackTopology(name="E", loops=tuple(loops), junctions=tuple(junctions))


_BUILDERS = {"A": _build_a, "B": _build_b, "C": _build_c, "D": _build_d, "E": _build_e}

PRESET_NAMES = tuple(sorted(_BUILDERS))


def preset(name: str) -> TrackTopology:
    """Build one of the shipped topologies A-E."""
    try:
        builder = _BUILDERS[name.upper()]
    except KeyError:
        raise KeyError(f"unknown topology preset {name!r}; choose from {PRESET_NAMES}")
    return builder()


def resolve_topology(spec: str) -> TrackTopology:
    """Resolve a preset name or a JSON file path to a topology."""
    if spec.upper() in _BUILDERS:
        return preset(spec)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(
            f"topology {spec!r} is neither a preset name {PRESET_NAMES} nor an existing file")
    return TrackTopology.load(path)
