import math

import numpy as np
import pytest

from billexp import tables
from billexp.bmap import (
    HALF_PI,
    K_INF,
    PhasePoint,
    cone_slopes,
    expansion_factor,
    flight_derivative,
    forward,
    inverse,
    involute,
    min_cone_expansion,
    orbit,
    phi_of_u,
    random_phase_point,
    strip_bounds,
    strip_index,
)
from billexp.errors import SingularInput

TWO_PI = 2.0 * math.pi


def clean_image(res):
    if not res.regular:
        return None
    return res.images[0]


# ---------------------------------------------------------------------------
# circle closed form

def test_circle_map_closed_form(circle_oracle):
    L = circle_oracle.walls[0].length
    for r, phi in [(0.2, 0.3), (3.0, -0.7), (5.9, 1.1), (1.0, 0.0)]:
        im = clean_image(forward(circle_oracle, PhasePoint(0, r, phi)))
        assert im is not None
        assert im.tau == pytest.approx(2.0 * math.cos(phi), abs=1e-12)
        assert im.point.phi == pytest.approx(phi, abs=1e-10)
        expect = (r + math.pi - 2.0 * phi) % L
        assert im.point.r % L == pytest.approx(expect % L, abs=1e-9)
        (a, b), (c, d) = im.derivative
        assert a == pytest.approx(1.0, abs=1e-12)
        assert b == pytest.approx(-2.0, abs=1e-12)
        assert c == pytest.approx(0.0, abs=1e-12)
        assert d == pytest.approx(1.0, abs=1e-12)


def test_circle_inverse_shifts_back(circle_oracle):
    L = circle_oracle.walls[0].length
    r, phi = 2.4, 0.5
    im = clean_image(inverse(circle_oracle, PhasePoint(0, r, phi)))
    assert im is not None
    expect = (r - (math.pi - 2.0 * phi)) % L
    assert im.point.r % L == pytest.approx(expect, abs=1e-9)
    assert im.point.phi == pytest.approx(phi, abs=1e-10)


def test_flight_derivative_circle_entries():
    for phi in (0.0, 0.4, -1.1):
        (a, b), (c, d) = flight_derivative(2.0 * math.cos(phi), -1.0, phi,
                                           -1.0, phi)
        assert a == pytest.approx(1.0, abs=1e-13)
        assert b == pytest.approx(-2.0, abs=1e-13)
        assert c == pytest.approx(0.0, abs=1e-13)
        assert d == pytest.approx(1.0, abs=1e-13)


# ---------------------------------------------------------------------------
# structural identities on the dispersing table

def regular_sample(table, count, seed, need_clean_inverse=False):
    rng = np.random.default_rng(seed)
    out = []
    guard = 0
    while len(out) < count and guard < 100 * count:
        guard += 1
        z = random_phase_point(table, rng)
        try:
            res = forward(table, z)
        except SingularInput:
            continue
        im = clean_image(res)
        if im is None or abs(im.point.phi) > 1.45:
            continue
        if need_clean_inverse:
            try:
                back = inverse(table, im.point)
            except SingularInput:
                continue
            if clean_image(back) is None:
                continue
        out.append((z, im))
    assert len(out) == count
    return out


def test_determinant_identity(tri):
    for z, im in regular_sample(tri, 200, seed=17):
        (a, b), (c, d) = im.derivative
        det = a * d - b * c
        expect = math.cos(z.phi) / math.cos(im.point.phi)
        assert det == pytest.approx(expect, rel=1e-10)


def test_derivative_matches_finite_differences(tri):
    h = 1e-6
    checked = 0
    for z, im in regular_sample(tri, 300, seed=23):
        if im.tau < 0.05 or abs(im.point.phi) > 1.2:
            continue
        wall = tri.walls[z.wall_id]
        if not (h < z.r < wall.length - h) or abs(z.phi) > HALF_PI - h:
            continue
        cols = []
        ok = True
        for dr, dphi in ((h, 0.0), (0.0, h)):
            ims = []
            for s in (1.0, -1.0):
                res = forward(tri, PhasePoint(z.wall_id, z.r + s * dr,
                                              z.phi + s * dphi))
                p = clean_image(res)
                if p is None or p.point.wall_id != im.point.wall_id:
                    ok = False
                    break
                ims.append(p.point)
            if not ok:
                break
            cols.append(((ims[0].r - ims[1].r) / (2 * h),
                         (ims[0].phi - ims[1].phi) / (2 * h)))
        if not ok:
            continue
        (a, b), (c, d) = im.derivative
        fd = ((cols[0][0], cols[1][0]), (cols[0][1], cols[1][1]))
        for got, exp in zip((fd[0][0], fd[0][1], fd[1][0], fd[1][1]),
                            (a, b, c, d)):
            assert abs(got - exp) <= 1e-4 * max(1.0, abs(exp))
        checked += 1
    assert checked >= 60


def test_forward_inverse_roundtrip(tri):
    for z, im in regular_sample(tri, 100, seed=31, need_clean_inverse=True):
        back = clean_image(inverse(tri, im.point))
        assert back.point.wall_id == z.wall_id
        assert back.point.r == pytest.approx(z.r, abs=1e-10)
        assert back.point.phi == pytest.approx(z.phi, abs=1e-10)


def test_involution_conjugacy(tri):
    # the time-reversal involution I satisfies I F I F = id on regular points
    for z, im in regular_sample(tri, 50, seed=37):
        w = involute(im.point)
        try:
            res2 = forward(tri, w)
        except SingularInput:
            continue
        im2 = clean_image(res2)
        if im2 is None:
            continue
        z2 = involute(im2.point)
        assert z2.wall_id == z.wall_id
        assert z2.r == pytest.approx(z.r, abs=1e-9)
        assert z2.phi == pytest.approx(z.phi, abs=1e-9)


def test_involute_is_involution():
    p = PhasePoint(2, 0.375, -0.8125)
    assert involute(involute(p)) == p


def test_inverse_derivative_is_matrix_inverse(tri):
    for z, im in regular_sample(tri, 50, seed=41, need_clean_inverse=True):
        back = clean_image(inverse(tri, im.point))
        (a, b), (c, d) = im.derivative
        (e, f), (g, h2) = back.derivative
        prod = ((a * e + b * g, a * f + b * h2),
                (c * e + d * g, c * f + d * h2))
        assert prod[0][0] == pytest.approx(1.0, abs=1e-8)
        assert prod[0][1] == pytest.approx(0.0, abs=1e-8)
        assert prod[1][0] == pytest.approx(0.0, abs=1e-8)
        assert prod[1][1] == pytest.approx(1.0, abs=1e-8)


# ---------------------------------------------------------------------------
# branching

def test_vertex_shot_two_images(tri):
    L0 = tri.walls[0].length
    res = forward(tri, PhasePoint(0, L0 / 2, 0.0))
    assert res.singular
    assert len(res.images) == 2
    tau_expect = math.sqrt(3.0) - (3.0 - 2.0 * math.sqrt(2.0))
    labels = {im.label for im in res.images}
    assert labels == {"left-wall", "right-wall"}
    walls = {im.point.wall_id for im in res.images}
    assert walls == {1, 2}
    for im in res.images:
        assert im.tau == pytest.approx(tau_expect, abs=1e-9)
        assert not im.grazing
        assert im.derivative is not None
    p0, p1 = (im.point for im in res.images)
    assert abs(p0.phi) == pytest.approx(abs(p1.phi), abs=1e-9)


def test_corner_step_image(tri):
    corner = tri.corners[tri.corner_at_start[0]]
    res = forward(tri, PhasePoint(0, 0.0, 0.0))
    assert len(res.images) == 1
    im = res.images[0]
    assert im.label == "corner-step"
    assert im.tau == 0.0
    other = corner.left_wall_id
    assert im.point.wall_id == other
    assert im.point.r == pytest.approx(tri.walls[other].length, abs=1e-12)
    assert im.derivative is not None


def test_singular_departures(tri):
    with pytest.raises(SingularInput):
        forward(tri, PhasePoint(0, 1.0, HALF_PI))
    with pytest.raises(SingularInput):
        forward(tri, PhasePoint(0, 1.0, -HALF_PI))


# ---------------------------------------------------------------------------
# grazing branch across a scatterer tangency

def hits_lens(res):
    for im in res.images:
        if im.point.wall_id in (3, 4):
            return True
        if any(ev.startswith("graze:w") for ev in im.trail):
            return True
    return False


def test_grazing_branch_at_lens_tangency(lens):
    L0 = lens.walls[0].length
    r0 = L0 / 2

    def probe(phi):
        return forward(lens, PhasePoint(0, r0, phi))

    lo, hi = -0.2, 0.0
    assert not hits_lens(probe(lo)) and hits_lens(probe(hi))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if hits_lens(probe(mid)):
            hi = mid
        else:
            lo = mid

    found = None
    for j in range(-300, 301):
        res = probe(hi + j * 1e-10)
        if any(im.grazing for im in res.images):
            found = res
            break
    assert found is not None
    assert found.singular
    graze = next(im for im in found.images if im.grazing)
    assert graze.label == "graze"
    assert abs(graze.point.phi) == HALF_PI
    assert graze.derivative is None
    assert graze.point.wall_id in (3, 4)
    cont = [im for im in found.images if not im.grazing]
    assert len(cont) >= 1
    assert any(ev.startswith("graze:w") for ev in cont[0].trail)
    assert cont[0].derivative is not None


# ---------------------------------------------------------------------------
# homogeneity strips

def test_strip_examples_small_k0():
    assert strip_index(0.3, k0=10) == 0
    assert strip_index(HALF_PI - 1.0 / 121.0, k0=10) == 10
    assert strip_index(-(HALF_PI - 1.0 / 400.0), k0=10) == -19


def test_strip_zero_band_inclusive():
    assert strip_index(HALF_PI - 1e-2, k0=10) == 0
    assert strip_index(HALF_PI - 1e-2 + 1e-12, k0=10) == 10
    assert strip_index(HALF_PI - 1.0 / 900.0, k0=30) == 0


def test_strip_infinite_and_signs():
    assert strip_index(HALF_PI) == K_INF
    assert strip_index(-HALF_PI) == -K_INF
    assert strip_index(-0.2) == 0
    k = strip_index(HALF_PI - 1e-5)
    assert k > 0
    assert strip_index(-(HALF_PI - 1e-5)) == -k


def test_strip_membership_random():
    rng = np.random.default_rng(9)
    for _ in range(500):
        u = 10.0 ** rng.uniform(-7, -0.5)
        phi = phi_of_u(u, 1 if rng.random() < 0.5 else -1)
        k = strip_index(phi)
        if k == 0:
            assert u >= 1.0 / (30 * 30) - 1e-18
        else:
            lo, hi = strip_bounds(k)
            assert lo <= u < hi or math.isclose(u, lo, rel_tol=1e-15)
            assert abs(k) >= 30
            assert (k > 0) == (phi > 0)


# ---------------------------------------------------------------------------
# invariant cones

def test_cone_push_positive(tri):
    for z, im in regular_sample(tri, 100, seed=43):
        k0 = tri.walls[z.wall_id].kappa
        k1 = tri.walls[im.point.wall_id].kappa
        lo, hi = cone_slopes(im.tau, k0, z.phi, k1, im.point.phi)
        assert 0.0 < lo <= hi
        assert math.isfinite(hi)
        m = min_cone_expansion(im.derivative, lo, hi)
        assert 0.0 < m
        assert m <= expansion_factor(im.derivative, lo) + 1e-12
        assert m <= expansion_factor(im.derivative, hi) + 1e-12


def test_zero_flight_cone_is_half_infinite():
    lo, hi = cone_slopes(0.0, 1.0, 0.3, 1.0, 0.2)
    assert lo > 0.0
    assert hi == math.inf


# ---------------------------------------------------------------------------
# orbits

def test_torus_orbit_invariants(torus2):
    rng = np.random.default_rng(2)
    best = None
    for _ in range(6):
        z = random_phase_point(torus2, rng)
        res = orbit(torus2, z, 300)
        if best is None or res.steps > best.steps:
            best = res
        if res.steps == 300:
            break
    assert best.steps >= 200
    cap = torus2.constants.tau_max
    for t in best.taus:
        assert 1e-12 < t <= cap + 1e-9
    for p in best.points:
        assert abs(p.phi) < HALF_PI
        assert 0.0 <= p.r <= torus2.walls[p.wall_id].length


def test_orbit_statuses(tri):
    L0 = tri.walls[0].length
    res = orbit(tri, PhasePoint(0, L0 / 2, 0.0), 5)
    assert res.status == "branched"
    assert res.steps == 0
    res = orbit(tri, PhasePoint(0, 1.0, HALF_PI), 5)
    assert res.status == "singular"
    assert len(res.points) == 1


def test_random_phase_point_ranges(tri):
    rng = np.random.default_rng(4)
    seen = set()
    for _ in range(200):
        p = random_phase_point(tri, rng)
        seen.add(p.wall_id)
        assert 0.0 <= p.r <= tri.walls[p.wall_id].length
        assert -HALF_PI < p.phi < HALF_PI
    assert seen == {0, 1, 2}
    a = np.random.default_rng(77)
    b = np.random.default_rng(77)
    assert random_phase_point(tri, a) == random_phase_point(tri, b)
