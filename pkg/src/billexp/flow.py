"""Straight-line flight and collision resolution inside a table.

The collision solver works on circles: a flight hits wall ``w`` where the ray
meets the wall's circle arriving against the inward normal.  Tangential hits
(incidence within EPS_TAN of pi/2) are flagged grazing; hits within EPS_CORNER
arclength of a wall endpoint are corner events and carry the branch structure
of the continuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    EscapedDomain,
    SectorBoundary,
    SequenceOverflow,
)
from .geometry import EPS_CORNER, TWO_PI, BilliardTable, Corner, corner_angle

EPS_TAN = 1e-9       # rad; tangency / sector-boundary tolerance
TAU_FLOOR = 1e-12    # departure exclusion window for root acceptance
_MAX_TORUS_RING = 64


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    direction: tuple[float, float]

    def at(self, t: float) -> tuple[float, float]:
        return (self.origin[0] + t * self.direction[0],
                self.origin[1] + t * self.direction[1])


@dataclass(frozen=True)
class Branch:
    label: str             # left-wall | right-wall | fly-by
    ray: Ray
    grazing_exit: bool = False


@dataclass(frozen=True)
class CollisionOutcome:
    kind: str              # regular | grazing | corner
    tau: float
    point: tuple[float, float]
    wall_id: int | None = None
    r: float | None = None
    theta: float | None = None
    normal_component: float | None = None     # d . n at the hit
    corner_id: int | None = None
    properness: str | None = None             # proper | improper (corners, grazing)
    branches: tuple[Branch, ...] = ()
    cell: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class ImmediateCollision:
    wall_id: int
    direction_in: tuple[float, float]
    direction_out: tuple[float, float]
    grazing: bool


@dataclass(frozen=True)
class CornerSequence:
    label: str
    events: tuple[ImmediateCollision, ...]
    exit_ray: Ray
    grazing_exit: bool


def reflect(direction, normal):
    """Mirror ``direction`` across the line orthogonal to ``normal``."""
    dx, dy = direction
    nx, ny = normal
    dn = dx * nx + dy * ny
    return (dx - 2.0 * dn * nx, dy - 2.0 * dn * ny)


# ---------------------------------------------------------------------------
# first collision

def _wall_roots(ox, oy, dx, dy, cx, cy, R, orientation):
    """Roots t of the ray-circle equation arriving against the inward normal.

    Yields (t, d_dot_n).  Uses the numerically stable quadratic form; the
    arrival condition d.n <= eps accepts the grazing double root.
    """
    ux, uy = ox - cx, oy - cy
    b = dx * ux + dy * uy
    c0 = ux * ux + uy * uy - R * R
    disc = b * b - c0
    if disc < 0.0:
        return
    sq = math.sqrt(disc)
    if b >= 0.0:
        q = -(b + sq)
    else:
        q = -(b - sq)
    roots = []
    if q != 0.0:
        roots.append(q)
        roots.append(c0 / q)
    else:
        roots.append(0.0)
    for t in roots:
        if t <= TAU_FLOOR:
            continue
        ddn = -orientation * (b + t) / R
        if ddn <= EPS_TAN:
            yield t, ddn


def _cells(ring: int):
    if ring == 0:
        yield (0, 0)
        return
    for i in range(-ring, ring + 1):
        yield (i, ring)
        yield (i, -ring)
    for j in range(-ring + 1, ring):
        yield (ring, j)
        yield (-ring, j)


def first_collision(table: BilliardTable, ray: Ray, *,
                    with_branches: bool = True) -> CollisionOutcome:
    """Nearest collision along the ray, or EscapedDomain.

    On the torus the scatterer lattice is searched ring by ring until no
    farther cell can beat the best hit.
    """
    ox, oy = ray.origin
    dx, dy = ray.direction
    best = None  # (t, wall, ddn, cell)
    max_R = max(w.radius for w in table.walls)

    if table.ambient == "plane":
        rings = (0,)
    else:
        rings = range(_MAX_TORUS_RING)
    for ring in rings:
        if best is not None and table.ambient == "torus" and ring > 1:
            # a cell at this ring is at least (ring-1) away from the origin cell
            if (ring - 1.0) - max_R > best[0]:
                break
        for cell in _cells(ring) if table.ambient == "torus" else ((0, 0),):
            for w in table.walls:
                cx = w.center[0] + cell[0]
                cy = w.center[1] + cell[1]
                for t, ddn in _wall_roots(ox, oy, dx, dy, cx, cy, w.radius,
                                          w.orientation):
                    if best is not None and t >= best[0]:
                        continue
                    px, py = ox + t * dx, oy + t * dy
                    theta = math.atan2(py - cy, px - cx)
                    if not w.contains_angle(theta, slack=EPS_CORNER / w.radius):
                        continue
                    best = (t, w, ddn, cell, theta)
    if best is None:
        raise EscapedDomain("ray met no wall")

    t, w, ddn, cell, theta = best
    px, py = ox + t * dx, oy + t * dy
    r = w.r_from_angle(theta)

    corner_id = None
    if not w.closed:
        if r <= EPS_CORNER:
            corner_id = table.corner_at_start[w.wall_id]
        elif r >= w.length - EPS_CORNER:
            corner_id = table.corner_at_end[w.wall_id]
    if corner_id is not None:
        corner = table.corners[corner_id]
        incoming = (dx, dy)
        try:
            properness = classify_collision(corner, incoming)
        except SectorBoundary:
            properness = "improper"   # tangent arrivals behave like grazing
        branches = tuple(corner_branches(table, corner, incoming)) \
            if with_branches else ()
        pos = corner.position if table.ambient == "plane" else (
            corner.position[0] + cell[0], corner.position[1] + cell[1])
        return CollisionOutcome(kind="corner", tau=t, point=pos,
                                wall_id=w.wall_id, r=r, theta=theta,
                                normal_component=ddn, corner_id=corner_id,
                                properness=properness, branches=branches,
                                cell=cell)
    kind = "grazing" if abs(ddn) <= EPS_TAN else "regular"
    return CollisionOutcome(kind=kind, tau=t, point=(px, py), wall_id=w.wall_id,
                            r=r, theta=theta, normal_component=ddn,
                            properness="improper" if kind == "grazing" else "proper",
                            cell=cell)


# ---------------------------------------------------------------------------
# corner sector machinery

def _cw_from(a, d) -> float:
    return (math.atan2(a[1], a[0]) - math.atan2(d[1], d[0])) % TWO_PI


def classify_collision(corner: Corner, incoming) -> str:
    """'proper' when the incoming velocity lies in the open external sector.

    The internal sector is swept clockwise from -w_minus to w_plus and has
    angle gamma; arrivals within EPS_TAN of either boundary raise
    SectorBoundary so the caller can pick the branch set explicitly.
    """
    neg_wm = (-corner.w_minus[0], -corner.w_minus[1])
    alpha = _cw_from(neg_wm, incoming)
    g = corner.gamma
    if alpha <= EPS_TAN or alpha >= TWO_PI - EPS_TAN or abs(alpha - g) <= EPS_TAN:
        raise SectorBoundary(
            f"incoming within {EPS_TAN} of a sector boundary at corner "
            f"{corner.corner_id}")
    return "improper" if alpha < g else "proper"


def _corner_wall_frames(table: BilliardTable, corner: Corner):
    """Tangent/normal limits of both walls at the corner point.

    Returns {wall_id: (tangent_extent, normal)} where tangent_extent points
    from the corner along the wall body.
    """
    wl = table.walls[corner.left_wall_id]
    wr = table.walls[corner.right_wall_id]
    _, n_l, t_l = wl.frame_at(wl.length)
    _, n_r, t_r = wr.frame_at(0.0)
    return {
        corner.left_wall_id: ((-t_l[0], -t_l[1]), (n_l[0], n_l[1])),
        corner.right_wall_id: ((t_r[0], t_r[1]), (n_r[0], n_r[1])),
    }


def chain_from_wall(table: BilliardTable, corner: Corner, incoming,
                    first_wall_id: int) -> CornerSequence:
    """Chain of immediate (tau = 0) collisions at the corner point.

    Walls are modeled by their tangent lines at the corner, which is the limit
    of nearby trajectories; reflections alternate between the two walls until
    the direction points into the open wedge.  An immediate grazing collision
    terminates the chain.
    """
    frames = _corner_wall_frames(table, corner)
    neg_wm = (-corner.w_minus[0], -corner.w_minus[1])
    g = corner.gamma
    cap = table.sequence_cap

    events = []
    v = (incoming[0], incoming[1])
    wall = first_wall_id
    label = "left-wall" if first_wall_id == corner.left_wall_id else "right-wall"
    grazing_exit = False
    for _ in range(cap + 1):
        _, n = frames[wall]
        v_new = reflect(v, n)
        events.append(ImmediateCollision(wall_id=wall, direction_in=v,
                                         direction_out=v_new, grazing=False))
        v = v_new
        other = table.other_wall_at(corner.corner_id, wall)
        ext_o, n_o = frames[other]
        press = v[0] * n_o[0] + v[1] * n_o[1]
        if abs(press) <= EPS_TAN and v[0] * ext_o[0] + v[1] * ext_o[1] > 0.0:
            # immediate grazing collision with the other wall; always last
            events.append(ImmediateCollision(wall_id=other, direction_in=v,
                                             direction_out=v, grazing=True))
            grazing_exit = True
            break
        if press < 0.0:
            wall = other
            continue
        break
    else:
        raise SequenceOverflow(
            f"corner sequence exceeded cap {cap} at corner {corner.corner_id}")

    alpha = _cw_from(neg_wm, v)
    if not grazing_exit and not (0.0 < alpha < g):
        # numerical sliver: exit direction pinched onto a wedge boundary
        grazing_exit = True
    return CornerSequence(label=label, events=tuple(events),
                          exit_ray=Ray(corner.position, v),
                          grazing_exit=grazing_exit)


def corner_sequence(table: BilliardTable, corner: Corner,
                    incoming) -> tuple[CornerSequence, ...]:
    """Immediate-collision chains for every continuation branch.

    Proper hits yield the two one-sided reflection chains; improper hits the
    front-wall chain plus the fly-by (whose chain is empty).  Chains whose
    exits coincide are merged, so at most two remain.
    """
    frames = _corner_wall_frames(table, corner)
    try:
        properness = classify_collision(corner, incoming)
    except SectorBoundary:
        properness = "improper"

    seqs: list[CornerSequence] = []
    for wall_id, (ext, n) in frames.items():
        press = incoming[0] * n[0] + incoming[1] * n[1]
        if press < -EPS_TAN:
            seqs.append(chain_from_wall(table, corner, incoming, wall_id))
    if properness == "improper":
        seqs.append(CornerSequence(label="fly-by", events=(),
                                   exit_ray=Ray(corner.position,
                                                tuple(incoming)),
                                   grazing_exit=False))

    merged: list[CornerSequence] = []
    for s in seqs:
        dup = False
        for m in merged:
            dot = (s.exit_ray.direction[0] * m.exit_ray.direction[0]
                   + s.exit_ray.direction[1] * m.exit_ray.direction[1])
            if dot > 1.0 - 1e-10:
                dup = True
                break
        if not dup:
            merged.append(s)
    return tuple(merged)


def corner_branches(table: BilliardTable, corner: Corner, incoming):
    """Continuation rays of all merged corner branches, labels included."""
    return [Branch(label=s.label, ray=s.exit_ray, grazing_exit=s.grazing_exit)
            for s in corner_sequence(table, corner, incoming)]
