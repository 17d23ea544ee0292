import numpy as np
import pytest

from delta_sim.geometry import (COLLISION_TOLERANCE, OrientedBox, PolylineSet, box_corners, box_distance,
                                box_penetration, boxes_collide, point_in_box, wrap_angle)


def random_pairs(rng, n):
    c1 = rng.uniform(-4, 4, (n, 2))
    c2 = rng.uniform(-4, 4, (n, 2))
    h1 = rng.uniform(-np.pi, np.pi, n)
    h2 = rng.uniform(-np.pi, np.pi, n)
    l1, l2 = rng.uniform(1, 6, n), rng.uniform(1, 6, n)
    w1, w2 = rng.uniform(0.5, 3, n), rng.uniform(0.5, 3, n)
    return c1, h1, l1, w1, c2, h2, l2, w2


def perimeter_points(rng, center, heading, length, width, n):
    """Uniform random points on a box outline."""
    corners = box_corners(center, heading, length, width)
    edges = np.roll(corners, -1, axis=0) - corners
    lengths = np.linalg.norm(edges, axis=1)
    which = rng.choice(4, size=n, p=lengths / lengths.sum())
    t = rng.random(n)
    return corners[which] + t[:, None] * edges[which]


def outline_distance(points, corners):
    """Smallest distance from sample points to the edges of a polygon."""
    a = corners[None]
    ab = np.roll(corners, -1, axis=0)[None] - a
    t = np.clip(np.sum((points[:, None] - a) * ab, -1) / np.sum(ab * ab, -1), 0, 1)
    return np.min(np.linalg.norm(points[:, None] - (a + t[..., None] * ab), axis=-1))


def monte_carlo_overlap(rng, box1, box2, n=10_000):
    """Containment oracle: two convex boxes overlap iff part of one outline lies inside the other."""
    p1 = perimeter_points(rng, *box1, n // 2)
    p2 = perimeter_points(rng, *box2, n - n // 2)
    return bool(point_in_box(p1, *box2).any() or point_in_box(p2, *box1).any())


def test_sat_matches_monte_carlo_oracle():
    rng = np.random.default_rng(20)
    c1, h1, l1, w1, c2, h2, l2, w2 = random_pairs(rng, 200)
    depth = box_penetration(c1, h1, l1, w1, c2, h2, l2, w2)
    sat = boxes_collide(c1, h1, l1, w1, c2, h2, l2, w2)
    checked = 0
    for i in range(200):
        if abs(depth[i]) < COLLISION_TOLERANCE:
            continue
        oracle = monte_carlo_overlap(rng, (c1[i], h1[i], l1[i], w1[i]), (c2[i], h2[i], l2[i], w2[i]))
        assert oracle == bool(sat[i]), f"pair {i}: depth {depth[i]}"
        checked += 1
    assert checked >= 190
    assert 0.2 < sat.mean() < 0.8  # both outcomes are exercised


def test_identical_boxes_collide_and_gap_does_not():
    assert boxes_collide([0, 0], 0.3, 4, 2, [0, 0], 0.3, 4, 2)
    assert not boxes_collide([0, 0], 0.0, 4, 2, [10, 0], 0.0, 4, 2)


def test_touching_boxes_are_not_colliding():
    # edges exactly touch: penetration 0, below the tolerance
    assert box_penetration([0, 0], 0.0, 4, 2, [4, 0], 0.0, 4, 2) == pytest.approx(0.0, abs=1e-12)
    assert not boxes_collide([0, 0], 0.0, 4, 2, [4, 0], 0.0, 4, 2)


def test_box_distance_examples():
    assert box_distance([0, 0], 0.0, 4, 2, [10, 0], 0.0, 4, 2) == pytest.approx(6.0)
    assert box_distance([0, 0], 0.0, 4, 2, [1, 0.5], 0.4, 4, 2) == 0.0
    # corner to corner along the diagonal
    d = box_distance([0, 0], 0.0, 2, 2, [3, 3], 0.0, 2, 2)
    assert d == pytest.approx(np.sqrt(2.0))


def test_box_distance_matches_dense_sampling():
    rng = np.random.default_rng(5)
    c1, h1, l1, w1, c2, h2, l2, w2 = random_pairs(rng, 30)
    c2 = c2 * 3  # mostly separated
    d = box_distance(c1, h1, l1, w1, c2, h2, l2, w2)
    for i in range(30):
        if d[i] == 0:
            continue
        # dense outline samples of one box against the exact edges of the other, both ways
        brute = min(outline_distance(perimeter_points(rng, c2[i], h2[i], l2[i], w2[i], 4000),
                                     box_corners(c1[i], h1[i], l1[i], w1[i])),
                    outline_distance(perimeter_points(rng, c1[i], h1[i], l1[i], w1[i], 4000),
                                     box_corners(c2[i], h2[i], l2[i], w2[i])))
        assert d[i] <= brute + 1e-12
        assert brute - d[i] < 0.01


def test_oriented_box_rejects_bad_extents():
    with pytest.raises(ValueError):
        OrientedBox((0.0, 0.0), 0.0, 0.0, 1.0)
    assert OrientedBox((0.0, 0.0), 0.0, 4.0, 2.0).corners().shape == (4, 2)


def test_wrap_angle_range():
    a = wrap_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.0, -6.2]))
    assert np.all(a > -np.pi) and np.all(a <= np.pi)
    assert a[0] == pytest.approx(np.pi) and a[1] == pytest.approx(np.pi)
    assert a[4] == pytest.approx(-6.2 + 2 * np.pi)


def test_signed_distance_sign_convention():
    edge = PolylineSet([np.array([[0.0, 0.0], [10.0, 0.0]])])
    assert edge.signed_distance([5.0, 2.0]) == pytest.approx(-2.0)  # left: drivable
    assert edge.signed_distance([5.0, -2.0]) == pytest.approx(2.0)


def test_signed_distance_near_vertex_uses_both_segments():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    edge = PolylineSet([pts])
    rng = np.random.default_rng(1)
    q = rng.uniform(7, 13, (200, 2))
    d = np.abs(edge.signed_distance(q))
    seg = [(pts[0], pts[1]), (pts[1], pts[2])]

    def brute(p):
        out = []
        for a, b in seg:
            t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
            out.append(np.linalg.norm(p - (a + t * (b - a))))
        return min(out)

    assert np.allclose(d, [brute(p) for p in q], atol=1e-12)


def test_polyline_rejects_degenerate_input():
    with pytest.raises(ValueError):
        PolylineSet([np.array([[0.0, 0.0]])])
    with pytest.raises(ValueError):
        PolylineSet([np.array([[0.0, 0.0], [0.0, 0.0]])])
