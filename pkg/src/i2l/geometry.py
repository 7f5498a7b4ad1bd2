"""Closed 2D track curves parametrized by arc length.

Each loop of a track is embedded in the plane as either a circle or a
"stadium" (two straights joined by semicircular caps).  Both shapes give an
exact, piecewise arc-length parametrization, which keeps junction placement
(shared 2D points between loops) and egocentric geometry features cheap and
exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LoopEmbedding:
    """Arc-length parametrized closed curve.

    The canonical (unrotated, untranslated) curve runs counterclockwise:
    bottom straight left-to-right, right cap, top straight right-to-left,
    left cap.  ``straight`` is the length of each straight piece; zero makes
    the curve a circle of the given radius.  ``angle`` rotates the whole
    curve; ``phase`` shifts where arc position 0 sits.
    """

    cx: float
    cy: float
    radius: float
    straight: float = 0.0
    angle: float = 0.0
    phase: float = 0.0

    @property
    def kind(self) -> str:
        return "circle" if self.straight == 0.0 else "stadium"

    @property
    def length(self) -> float:
        return 2.0 * self.straight + TWO_PI * self.radius

    def _canonical_point(self, s: float) -> tuple[float, float, float]:
        """Point and heading on the unplaced curve at arc position s.

        Returns (x, y, heading_angle) with s already reduced mod length.
        """
        S, r = self.straight, self.radius
        cap = math.pi * r
        if s < S:  # bottom straight, heading +x
            return (-0.5 * S + s, -r, 0.0)
        s -= S
        if s < cap:  # right cap
            phi = -0.5 * math.pi + s / r
            return (0.5 * S + r * math.cos(phi), r * math.sin(phi),
                    phi + 0.5 * math.pi)
        s -= cap
        if s < S:  # top straight, heading -x
            return (0.5 * S - s, r, math.pi)
        s -= S
        phi = 0.5 * math.pi + s / r  # left cap
        return (-0.5 * S + r * math.cos(phi), r * math.sin(phi),
                phi + 0.5 * math.pi)

    def point(self, s: float) -> tuple[float, float]:
        x, y = self.point_and_heading(s)[:2]
        return (x, y)

    def heading(self, s: float) -> float:
        """Tangent direction (radians) at arc position s."""
        return self.point_and_heading(s)[2]

    def point_and_heading(self, s: float) -> tuple[float, float, float]:
        s = (s + self.phase) % self.length
        x, y, h = self._canonical_point(s)
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        return (self.cx + ca * x - sa * y,
                self.cy + sa * x + ca * y,
                (h + self.angle) % TWO_PI)

    def arc_position(self, xy: tuple[float, float], tol: float = 1e-9) -> float:
        """Invert the parametrization for a point lying on the curve.

        Raises ValueError if ``xy`` is farther than ``tol`` from the curve.
        """
        ca, sa = math.cos(-self.angle), math.sin(-self.angle)
        dx, dy = xy[0] - self.cx, xy[1] - self.cy
        x = ca * dx - sa * dy
        y = sa * dx + ca * dy
        S, r = self.straight, self.radius
        cap = math.pi * r
        candidates: list[float] = []
        if S > 0.0:
            if abs(y + r) <= tol and -0.5 * S - tol <= x <= 0.5 * S + tol:
                candidates.append(min(max(x + 0.5 * S, 0.0), S))
            if abs(y - r) <= tol and -0.5 * S - tol <= x <= 0.5 * S + tol:
                candidates.append(S + cap + min(max(0.5 * S - x, 0.0), S))
        for sign, base, centre_x in ((1.0, S, 0.5 * S), (-1.0, 2 * S + cap, -0.5 * S)):
            ux, uy = x - centre_x, y
            d = math.hypot(ux, uy)
            if abs(d - r) > tol or d == 0.0:
                continue
            phi = math.atan2(uy, ux)
            if sign > 0:  # right cap: phi in [-pi/2, pi/2]
                if math.cos(phi) >= -tol / max(r, 1.0):
                    candidates.append(base + ((phi + 0.5 * math.pi) % TWO_PI) * r)
            else:  # left cap: phi in [pi/2, 3pi/2]
                if math.cos(phi) <= tol / max(r, 1.0):
                    candidates.append(base + ((phi - 0.5 * math.pi) % TWO_PI) * r)
        best = None
        for s in candidates:
            s_abs = (s - self.phase) % self.length
            px, py = self.point(s_abs)
            err = math.hypot(px - xy[0], py - xy[1])
            if err <= tol and (best is None or err < best[1]):
                best = (s_abs, err)
        if best is None:
            raise ValueError(f"point {xy} does not lie on the curve (tol={tol})")
        return best[0]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "cx": self.cx,
            "cy": self.cy,
            "radius": self.radius,
            "straight": self.straight,
            "angle": self.angle,
            "phase": self.phase,
        }

    @classmethod
    def from_json(cls, data: dict) -> "LoopEmbedding":
        return cls(
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            radius=float(data["radius"]),
            straight=float(data.get("straight", 0.0)),
            angle=float(data.get("angle", 0.0)),
            phase=float(data.get("phase", 0.0)),
        )


def circle(cx: float, cy: float, length: float, phase: float = 0.0) -> LoopEmbedding:
    """Circle embedding with the given total circumference."""
    return LoopEmbedding(cx=cx, cy=cy, radius=length / TWO_PI, phase=phase)


def stadium(cx: float, cy: float, length: float, radius: float,
            vertical: bool = False, phase: float = 0.0) -> LoopEmbedding:
    """Stadium embedding with the given total length and cap radius."""
    straight = 0.5 * (length - TWO_PI * radius)
    if straight <= 0.0:
        raise ValueError("length too short for the given cap radius")
    return LoopEmbedding(cx=cx, cy=cy, radius=radius, straight=straight,
                         angle=0.5 * math.pi if vertical else 0.0, phase=phase)
