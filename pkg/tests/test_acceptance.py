"""End-to-end acceptance gates.

One test per numbered gate; each asserts the hard bound and prints the
measured values (visible under -rP or -s).  Seeds are frozen so every run
is byte-reproducible; the recorded baselines in comments were measured on
first green and are what "stable" is judged against.
"""

import math
import time

import numpy as np
import pytest

from billexp import cli
from billexp import singularities as sing
from billexp import ucurves
from billexp.bmap import (
    PhasePoint,
    certify_expansion_constant,
    certify_hyperbolicity,
    forward,
    random_phase_point,
)
from billexp.errors import BilliardError, NoSuchN
from billexp.geometry import estimate_constants
from billexp.tables import load_builtin

HALF_PI = math.pi / 2


def _clean(res):
    """Single regular image or None."""
    if len(res.images) != 1:
        return None
    im = res.images[0]
    if im.label != "regular" or im.trail or im.grazing:
        return None
    return im


# ---------------------------------------------------------------------------
# 1. closed-form oracle on the circle

def test_01_circle_map_and_chord_match_closed_form(circle_oracle):
    L = circle_oracle.walls[0].length
    rng = np.random.default_rng(np.random.SeedSequence([101]))
    t0 = time.perf_counter()
    worst_map = worst_chord = 0.0
    for _ in range(1000):
        r = float(rng.uniform(0.0, L))
        phi = float(rng.uniform(-1.4, 1.4))
        im = _clean(forward(circle_oracle, PhasePoint(0, r, phi)))
        assert im is not None
        worst_chord = max(worst_chord, abs(im.tau - 2.0 * math.cos(phi)))
        dr = (im.point.r - (r + math.pi - 2.0 * phi)) % L
        dr = min(dr, L - dr)
        worst_map = max(worst_map, dr, abs(im.point.phi - phi))
    dt = time.perf_counter() - t0
    print("gate 1: map err %.3g (<=1e-10), chord err %.3g (<=1e-12), %.2fs"
          % (worst_map, worst_chord, dt))
    assert worst_map <= 1e-10
    assert worst_chord <= 1e-12
    assert dt < 1.0


# ---------------------------------------------------------------------------
# 2. derivative gates: exact determinant identity + finite differences

def test_02_derivative_determinant_and_finite_differences(tri):
    h = 1e-6
    rng = np.random.default_rng(np.random.SeedSequence([5]))
    t0 = time.perf_counter()
    worst_det = worst_fd = 0.0
    checked = 0
    while checked < 10_000:
        z = random_phase_point(tri, rng)
        wall = tri.walls[z.wall_id]
        # stay clear of chart edges and of grazing so the stencil is regular
        if not (50 * h < z.r < wall.length - 50 * h) or abs(z.phi) > 1.2:
            continue
        try:
            im = _clean(forward(tri, z))
        except BilliardError:
            continue
        if im is None or im.tau < 0.05 or abs(im.point.phi) > 1.2:
            continue
        wall2 = tri.walls[im.point.wall_id]
        if not (50 * h < im.point.r < wall2.length - 50 * h):
            continue
        (a, b), (c, d) = im.derivative
        det = a * d - b * c
        worst_det = max(worst_det, abs(
            det * math.cos(im.point.phi) / math.cos(z.phi) - 1.0))
        cols = []
        ok = True
        for dr, dphi in ((h, 0.0), (0.0, h)):
            pts = []
            for s in (1.0, -1.0):
                try:
                    p = _clean(forward(tri, PhasePoint(
                        z.wall_id, z.r + s * dr, z.phi + s * dphi)))
                except BilliardError:
                    p = None
                if p is None or p.point.wall_id != im.point.wall_id:
                    ok = False
                    break
                pts.append(p.point)
            if not ok:
                break
            cols.append(((pts[0].r - pts[1].r) / (2 * h),
                         (pts[0].phi - pts[1].phi) / (2 * h)))
        if not ok:
            continue
        for got, exp in zip((cols[0][0], cols[1][0], cols[0][1], cols[1][1]),
                            (a, b, c, d)):
            worst_fd = max(worst_fd, abs(got - exp) / max(1.0, abs(exp)))
        checked += 1
    dt = time.perf_counter() - t0
    print("gate 2: det err %.3g (<=1e-10), fd err %.3g (<=1e-6), "
          "%d pts, %.1fs" % (worst_det, worst_fd, checked, dt))
    assert worst_det <= 1e-10
    assert worst_fd <= 1e-6
    assert dt < 30.0


# ---------------------------------------------------------------------------
# 3. the increasing cone maps strictly inside itself

def test_03_increasing_cone_maps_strictly_inside(tri):
    rng = np.random.default_rng(np.random.SeedSequence([17]))
    vectors = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.2), (0.2, 1.0))
    violations = used = 0
    while used < 100_000:
        z = random_phase_point(tri, rng)
        try:
            im = _clean(forward(tri, z))
        except BilliardError:
            continue
        if im is None:
            continue
        (a, b), (c, d) = im.derivative
        for vx, vy in vectors:
            wx, wy = a * vx + b * vy, c * vx + d * vy
            if not (wx * wy > 0.0):    # strict: boundary images must leave it
                violations += 1
        used += 1
    print("gate 3: %d samples x %d vectors, %d violations"
          % (used, len(vectors), violations))
    assert violations == 0


# ---------------------------------------------------------------------------
# 4. one-step expansion floor: positive and stable under sample doubling

def test_04_expansion_floor_positive_and_stable(tri):
    c1, used1 = certify_expansion_constant(tri, 100_000, 203)
    c2, used2 = certify_expansion_constant(tri, 200_000, 203)
    rel = abs(c1 - c2) / c2
    # baseline 0.2533 / 0.2430, drift 4.2%
    print("gate 4: C=%.6f (n=%d) vs %.6f (n=%d), drift %.1f%%"
          % (c1, used1, c2, used2, 100 * rel))
    assert c1 > 0.0 and c2 > 0.0
    assert used1 > 90_000
    assert rel <= 0.10


# ---------------------------------------------------------------------------
# 5. sqrt-law constant for one-step component growth

def test_05_component_growth_constant_stable_under_range_halving(tri):
    c_full, n_full = ucurves.certify_length_constant(
        tri, 10_000, 205, delta_lo=1e-6, delta_hi=1e-3)
    c_half, n_half = ucurves.certify_length_constant(
        tri, 10_000, 205, delta_lo=1e-6, delta_hi=5e-4)
    rel = abs(c_full - c_half) / c_full
    # baseline 3.3106 / 3.2844, drift 0.8%
    print("gate 5: C_len=%.6f (n=%d) vs %.6f (n=%d), drift %.1f%%"
          % (c_full, n_full, c_half, n_half, 100 * rel))
    assert 0.0 < c_full < 1e3 and 0.0 < c_half < 1e3
    assert rel <= 0.10


# ---------------------------------------------------------------------------
# 6. iterated stretch fits a uniform growth floor

def test_06_iterated_stretch_fits_uniform_growth(tri):
    c_hyp, lam, residuals, mins = certify_hyperbolicity(
        tri, 10_000, 203, n_max=12)
    print("gate 6: lam=%.4f c=%.4f" % (lam, c_hyp))
    print("gate 6: fit residuals %s"
          % " ".join("%+.3f" % x for x in residuals))
    print("gate 6: per-step minima %s"
          % " ".join("%.3g" % m for m in mins))
    assert lam > 1.0
    assert 0.0 < c_hyp < math.inf
    assert len(residuals) == 12


# ---------------------------------------------------------------------------
# 7. corner collisions: at most two continuations, each realized by limits

_NUDGES = ((1, 0), (-1, 0), (0, 1), (0, -1),
           (1, 1), (-1, -1), (1, -1), (-1, 1))


def test_07_corner_branches_at_most_two_and_realized(tri):
    curves = [c for c in sing.trace_singularity(tri, -1, resolution=600)
              if c.origin == "corner-preimage"]
    nodes = [p for c in curves for p in c.nodes[1:-1]]
    assert len(nodes) >= 500
    over = unrealized = branched = 0
    for z in nodes[:500]:
        res = forward(tri, z)
        n_img = len(res.images)
        if n_img > 2:
            over += 1
            continue
        if n_img == 2:
            branched += 1
        targets = [(im.point.wall_id, im.point.r, im.point.phi)
                   for im in res.images]
        hit = set()
        # nudge off the corner-hitting set in 8 directions; the first
        # regular forward per direction is the one-sided limit probe
        for dx, dy in _NUDGES:
            for h in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
                q = PhasePoint(z.wall_id, z.r + dx * h, z.phi + dy * h)
                try:
                    r2 = forward(tri, q)
                except BilliardError:
                    continue
                if len(r2.images) != 1:
                    continue
                p = r2.images[0].point
                for i, (w, r, phi) in enumerate(targets):
                    if p.wall_id == w and \
                            math.hypot(p.r - r, p.phi - phi) < 1e-6:
                        hit.add(i)
                break
        if len(hit) != n_img:
            unrealized += 1
    print("gate 7: 500 corner hits, %d branched, %d with >2 images, "
          "%d unrealized" % (branched, over, unrealized))
    assert over == 0
    assert unrealized == 0


# ---------------------------------------------------------------------------
# 8. order-1 sector count bounded by the certified table constants

def _near_corner_points(table, n_dist=8):
    pts = []
    phis = (0.3, -0.4, 0.9, -0.7)
    i = 0
    for corner in table.corners:
        for wall_id, at_end in ((corner.left_wall_id, True),
                                (corner.right_wall_id, False)):
            L = table.walls[wall_id].length
            for d in np.geomspace(1e-6, 1e-2, n_dist):
                r = L - d if at_end else d
                pts.append(PhasePoint(wall_id, float(r), phis[i % 4]))
                i += 1
    return pts


def test_08_one_step_sector_count_bounded(tri):
    bound = estimate_constants(tri, samples=20_000, seed=3).sector_bound()
    curves = [c for c in sing.trace_singularity(tri, -1, resolution=300)
              if c.origin == "corner-preimage"]
    on_curve = [p for c in curves for p in c.nodes[1:-1]][::6][:40]
    junctions = [PhasePoint(p.wall_id, p.r, p.phi)
                 for p in sing.find_multiple_points(tri)]
    pts = (on_curve + junctions + _near_corner_points(tri))[:100]
    assert len(pts) == 100
    worst = 0
    for z in pts:
        n = len(sing.sector_portrait(tri, z, 1).sectors)
        worst = max(worst, n)
        assert n <= bound
    print("gate 8: 100 points, max sectors %d, bound %.1f" % (worst, bound))


# ---------------------------------------------------------------------------
# 9. at most one regular image sector expands over an active quadrant

def test_09_active_quadrant_expander_unique(tri):
    curves = [c for c in sing.trace_singularity(tri, -1, resolution=300)
              if c.origin == "corner-preimage"]
    on_curve = [p for c in curves for p in c.nodes[1:-1]][2::8][:30]
    rng = np.random.default_rng(np.random.SeedSequence([29]))
    pts = on_curve + _near_corner_points(tri)[:40]
    while len(pts) < 100:
        pts.append(random_phase_point(tri, rng))
    t0 = time.perf_counter()
    worst = 0
    for z in pts:
        verdict = sing.active_sector_conservation(tri, z)
        worst = max(worst, max(verdict.counts.values(), default=0))
        assert verdict.passed
    dt = time.perf_counter() - t0
    print("gate 9: 100 portraits pass, max expander count %d, %.1fs"
          % (worst, dt))
    assert dt < 600.0


# ---------------------------------------------------------------------------
# 10. regular branch counts grow at most linearly, with a stable slope

def test_10_regular_complexity_slope_stable(tri):
    pts = sing.find_multiple_points(tri)
    assert len(pts) >= 4
    records = {n: [sing.regular_complexity(tri, p, n) for p in pts]
               for n in range(1, 6)}
    half = len(pts) // 2
    flat_half = [r for n in records for r in records[n][:half]]
    flat_full = [r for n in records for r in records[n]]
    s_half = sing.fit_complexity_slope(flat_half)
    s_full = sing.fit_complexity_slope(flat_full)
    rel = abs(s_half - s_full) / s_full
    print("gate 10: slope %.4f (half %d pts) vs %.4f (all %d pts), "
          "drift %.1f%%" % (s_half, half, s_full, len(pts), 100 * rel))
    assert s_full > 0.0
    assert rel <= 0.20


# ---------------------------------------------------------------------------
# 11. nearly-grazing one-step sum: small, and halved by doubling the cutoff

def test_11_nearly_grazing_sum_small_and_halved_by_deeper_cutoff(tri):
    t0 = time.perf_counter()
    delta = 1e-4

    # Monte-Carlo baseline exactly as the sum is sampled everywhere else.
    # Chance straddles of a grazing preimage are ~1e-3 per curve, so the
    # recorded baseline at this scale is 0; the bound still gates it.
    sup30 = sup60 = 0.0
    for i in range(1000):
        rng = np.random.default_rng(np.random.SeedSequence([23, 1, i]))
        try:
            W, _ = ucurves._draw_curve(tri, rng, delta, 30)
        except BilliardError:
            continue
        sup30 = max(sup30, ucurves.one_step_grazing_sum(tri, W, k0=30))
        sup60 = max(sup60, ucurves.one_step_grazing_sum(tri, W, k0=60))
    assert sup30 < 0.1
    if sup30 > 0.0:
        assert sup60 <= 0.5 * sup30
    else:
        assert sup60 == 0.0

    # Deterministic curves astride traced grazing preimages exercise the
    # halving claim with content (every sum nonzero, worst case included).
    g30, g60 = [], []
    anchors = ucurves._graze_anchors(tri)
    for a in anchors:
        for f in (0.0, 0.1, -0.1):
            z = PhasePoint(a.wall_id, a.r + f * delta, a.phi + f * delta)
            try:
                W = ucurves.seed_ucurve(tri, z, delta)
            except BilliardError:
                continue
            g30.append(ucurves.one_step_grazing_sum(tri, W, k0=30))
            g60.append(ucurves.one_step_grazing_sum(tri, W, k0=60))
    nz = sum(1 for v in g30 if v > 0.0)
    dt = time.perf_counter() - t0
    # baseline: 144 curves, sup30 0.1037, sup60 0.0513, ratio 0.495
    print("gate 11: sampled sup %.4g / %.4g; constructed %d curves "
          "(%d nonzero) sup %.4f -> %.4f, ratio %.3f, %.0fs"
          % (sup30, sup60, len(g30), nz, max(g30), max(g60),
             max(g60) / max(g30), dt))
    assert nz >= 120
    assert max(g60) <= 0.5 * max(g30)
    assert dt < 600.0


# ---------------------------------------------------------------------------
# 12. headline verdict: some depth makes the expansion sum contract

def test_12_depth_choice_gives_contracting_sum_on_both_tables(tri, torus2):
    t0 = time.perf_counter()
    for name, table in (("tri", tri), ("torus2", torus2)):
        constants = ucurves.fit_constants(table, 61)
        try:
            n_use = ucurves.select_N(constants)
            source = "select"
            depth = n_use
        except NoSuchN:
            n_use = None
            source = "empirical"
            depth = 6
        report = ucurves.sup_scan(table, 1e-4, 1000, depth, 30, seed=407,
                                  table_id=name, keep_rows=False)
        if n_use is None:
            n_use = next((n for n in range(1, depth + 1)
                          if report.sup_e[n] < 1.0), None)
            assert n_use is not None, "%s: no depth up to %d works" % (
                name, depth)
        assert n_use <= 12
        sup_at = report.sup_e[n_use]
        # baseline: tri empirical N=3 sup 0.939; torus2 select N=4 sup ~0.06
        print("gate 12: %s N=%d (%s) sup E_N=%.4f over %d curves"
              % (name, n_use, source, sup_at, report.used))
        assert sup_at < 1.0
    dt = time.perf_counter() - t0
    print("gate 12: total %.0fs" % dt)
    assert dt < 1800.0


# ---------------------------------------------------------------------------
# 13. stochastic commands are byte-identical across threads and reruns

def test_13_stochastic_commands_byte_deterministic(tmp_path):
    def run(*argv):
        assert cli.run(list(argv)) == 0

    paths = {k: tmp_path / k for k in
             ("v1", "v2", "g1", "g2", "e1", "e2", "e3")}
    run("validate", "--table", "tri", "--format", "json",
        "--out", str(paths["v1"]))
    run("validate", "--table", "tri", "--format", "json",
        "--out", str(paths["v2"]))
    run("grazing-sum", "--table", "tri", "--seed", "5", "--samples", "20",
        "--out", str(paths["g1"]))
    run("grazing-sum", "--table", "tri", "--seed", "5", "--samples", "20",
        "--out", str(paths["g2"]))
    base = ("expansion", "--table", "tri", "--seed", "7", "--samples", "40",
            "--N", "2")
    run(*base, "--threads", "1", "--out", str(paths["e1"]))
    run(*base, "--threads", "4", "--out", str(paths["e2"]))
    run(*base, "--threads", "1", "--out", str(paths["e3"]))
    v1, v2 = paths["v1"].read_bytes(), paths["v2"].read_bytes()
    g1, g2 = paths["g1"].read_bytes(), paths["g2"].read_bytes()
    e1 = paths["e1"].read_bytes()
    e2 = paths["e2"].read_bytes()
    e3 = paths["e3"].read_bytes()
    print("gate 13: validate %dB, grazing-sum %dB, expansion %dB, "
          "all reruns identical" % (len(v1), len(g1), len(e1)))
    assert v1 == v2
    assert g1 == g2
    assert e1 == e2 == e3
