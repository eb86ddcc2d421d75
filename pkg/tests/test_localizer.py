import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gauss, project_all
from reflectloc.localizer import (
    ESTIMATE_CSV_HEADER,
    Estimate,
    Localizer,
    LocalizerConfig,
    PackedPaths,
    ParticleSet,
    compute_weights,
    confidence_ellipsoid,
    estimate_row,
    generalized_variance,
    init_particles,
    likelihood,
    likelihoods,
    perpendicular_foot,
    perturb,
    resample,
    run,
    systematic_indices,
    write_particles_csv,
)
from reflectloc.occupancy_map import Box
from reflectloc.ray_tracer import AcousticRay, IncomingSignal, RayPath

ROOM = Box((0, 0, 0), (7, 7, 3))
SIG = IncomingSignal(np.array([1.0, 0, 0]), 4000, 1.0)


def ray(origin, direction, length, order=0):
    d = np.asarray(direction, float)
    return AcousticRay(np.asarray(origin, float), d / np.linalg.norm(d), order, 1.0, length)


def path(*rays):
    return RayPath(list(rays), SIG)


def through(o, q, extra=2.0):
    o, q = np.asarray(o, float), np.asarray(q, float)
    return ray(o, q - o, np.linalg.norm(q - o) + extra)


class TestInit:
    def test_deterministic(self):
        cfg = LocalizerConfig(rng_seed=5)
        a = init_particles(ROOM, cfg, np.random.default_rng(5))
        b = init_particles(ROOM, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_inside_and_centered(self):
        cfg = LocalizerConfig()
        ps = init_particles(ROOM, cfg, np.random.default_rng(0))
        lo, hi = np.array(ROOM.lo), np.array(ROOM.hi)
        assert np.all(ps.positions >= lo) and np.all(ps.positions <= hi)
        se = (hi - lo) / math.sqrt(12 * cfg.particle_count)
        assert np.all(np.abs(ps.positions.mean(axis=0) - ROOM.center) < 3 * se)
        assert ps.weights.sum() == pytest.approx(1.0)


class TestPerturb:
    def test_vanishing_step(self):
        cfg = LocalizerConfig(sigma_s=1e-12)
        ps = init_particles(ROOM, cfg, np.random.default_rng(1))
        moved = perturb(ps, cfg, np.random.default_rng(2))
        np.testing.assert_allclose(moved.positions, ps.positions, atol=1e-9)

    def test_isotropy_and_half_normal_mean(self):
        n = 100_000
        cfg = LocalizerConfig(particle_count=n, sigma_s=1.0)
        ps = ParticleSet(np.zeros((n, 3)), np.full(n, 1.0 / n))
        disp = perturb(ps, cfg, np.random.default_rng(3)).positions
        se = disp.std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(disp.mean(axis=0)) < 3 * se)
        mag = np.linalg.norm(disp, axis=1)
        assert abs(mag.mean() - math.sqrt(2 / math.pi)) < 3 * mag.std() / math.sqrt(n)

    def test_clamped_to_bounds(self):
        cfg = LocalizerConfig(sigma_s=5.0)
        ps = init_particles(ROOM, cfg, np.random.default_rng(4))
        moved = perturb(ps, cfg, np.random.default_rng(5), ROOM)
        assert np.all(moved.positions >= ROOM.lo) and np.all(moved.positions <= ROOM.hi)


class TestFoot:
    r = ray((0, 0, 0), (1, 0, 0), 5.0)

    def test_axis_projection(self):
        foot, dist = perpendicular_foot((1, 1, 0), self.r)
        np.testing.assert_allclose(foot, [1, 0, 0])
        assert dist == 1.0

    def test_outside_segment(self):
        assert perpendicular_foot((7, 1, 0), self.r) is None
        assert perpendicular_foot((-0.1, 1, 0), self.r) is None

    def test_on_ray(self):
        foot, dist = perpendicular_foot((2, 0, 0), self.r)
        np.testing.assert_allclose(foot, [2, 0, 0])
        assert dist == 0.0


class TestLikelihood:
    def test_peak(self):
        p = path(ray((0, 0, 0), (1, 0, 0), 5.0))
        assert likelihood((2, 0, 0), [p], 0.3) == pytest.approx(1 / (0.3 * math.sqrt(2 * math.pi)))

    def test_all_filtered(self):
        p = path(ray((0, 0, 0), (1, 0, 0), 5.0))
        assert likelihood((-3, 0, 0), [p], 0.3) == 0.0

    def test_max_not_sum(self):
        # two rays of one path at distances 1 and 2, sigma 1
        p = path(ray((0, 0, 1), (1, 0, 0), 5.0), ray((0, 0, -2), (1, 0, 0), 5.0, order=1))
        value = likelihood((1, 0, 0), [p], 1.0)
        assert value == pytest.approx(0.2419707245, abs=1e-9)
        assert value == pytest.approx(gauss(1.0, 1.0), rel=1e-12)

    def test_paths_add(self):
        a = path(ray((0, 0, 0), (1, 0, 0), 5.0))
        b = path(ray((2, -3, 0), (0, 1, 0), 5.0))
        assert likelihood((2, 0, 0), [a, b], 0.5) == pytest.approx(2 * gauss(0.0, 0.5))

    def test_near_field_drops_direct_rays_only(self):
        a = path(ray((0, 0, 0), (1, 0, 0), 5.0))
        b = path(ray((0, 0, 0), (1, 0, 0), 5.0, order=1))
        assert likelihood((0.5, 0, 0), [a], 0.5, near_field_radius=1.0) == 0.0
        assert likelihood((0.5, 0, 0), [b], 0.5, near_field_radius=1.0) > 0.0
        assert likelihood((1.5, 0, 0), [a], 0.5, near_field_radius=1.0) > 0.0


def random_paths(rng, n_paths, max_rays):
    out = []
    for _ in range(n_paths):
        rays = [ray(rng.uniform(0, 5, 3), rng.standard_normal(3), rng.uniform(0.5, 6), order=k)
                for k in range(rng.integers(1, max_rays + 1))]
        out.append(path(*rays))
    return out


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), sigma=st.floats(0.05, 2.0))
def test_vectorized_likelihood_matches_brute_force(seed, sigma):
    rng = np.random.default_rng(seed)
    paths = random_paths(rng, rng.integers(1, 5), 4)
    pts = rng.uniform(-1, 6, (40, 3))
    fast = likelihoods(pts, PackedPaths.from_paths(paths), sigma)
    for p, got in zip(pts, fast):
        total = 0.0
        any_inside = False
        for pa in paths:
            vals = [gauss(dist, sigma) if inside else 0.0 for inside, dist in project_all(p, pa.rays)]
            any_inside |= any(inside for inside, _ in project_all(p, pa.rays))
            total += max(vals)
        assert got == pytest.approx(total, rel=1e-12, abs=1e-300)
        if not any_inside:
            assert got == 0.0


class TestWeights:
    def test_normalized(self):
        rng = np.random.default_rng(0)
        cfg = LocalizerConfig()
        ps = init_particles(ROOM, cfg, rng)
        out = compute_weights(ps, random_paths(rng, 3, 2), cfg)
        assert out.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_equidistant_uniform(self):
        ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        pos = np.c_[np.full(8, 2.0), np.cos(ang), np.sin(ang)] + [0, 3, 1.5]
        ps = ParticleSet(pos, np.full(8, 1 / 8))
        out = compute_weights(ps, [path(ray((0, 3, 1.5), (1, 0, 0), 5.0))], LocalizerConfig())
        np.testing.assert_allclose(out.weights, 1 / 8, rtol=1e-12)

    def test_on_ray_wins(self):
        pos = np.array([[2.0, 3, 1.5], [2, 4, 1.5], [5, 6, 2], [1, 1, 0.5]])
        ps = ParticleSet(pos, np.full(4, 0.25))
        out = compute_weights(ps, [path(ray((0, 3, 1.5), (1, 0, 0), 5.0))], LocalizerConfig())
        assert np.argmax(out.weights) == 0
        assert out.weights[0] > out.weights[1:].max()

    def test_zero_likelihood_fallback(self):
        pos = np.array([[-3.0, 0, 0], [-4, 1, 0]])
        ps = ParticleSet(pos, np.array([0.9, 0.1]))
        out = compute_weights(ps, [path(ray((0, 0, 0), (1, 0, 0), 5.0))], LocalizerConfig())
        assert out.zero_likelihood
        np.testing.assert_array_equal(out.weights, [0.5, 0.5])


class TestResample:
    def test_degenerate(self):
        ps = ParticleSet(np.arange(15.0).reshape(5, 3), np.array([0, 0, 1.0, 0, 0]))
        out = resample(ps, np.random.default_rng(0))
        assert np.all(out.positions == ps.positions[2])
        np.testing.assert_array_equal(out.weights, 0.2)

    @pytest.mark.parametrize("u0", np.linspace(0, 0.25, 26, endpoint=False))
    def test_three_to_one(self, u0):
        # four particles, comb teeth at u0, u0 + 1/4, u0 + 1/2, u0 + 3/4
        w = np.array([0.75, 0.25, 0.0, 0.0])
        assert list(np.bincount(systematic_indices(w, u0), minlength=4)) == [3, 1, 0, 0]

    def test_unbiased_multiplicity(self):
        rng = np.random.default_rng(7)
        w = rng.dirichlet(np.ones(6))
        n, seeds = 6, 10_000
        counts = np.zeros((seeds, n))
        ps = ParticleSet(np.arange(n * 3.0).reshape(n, 3), w)
        for s in range(seeds):
            out = resample(ps, np.random.default_rng(s))
            counts[s] = [np.sum(out.positions[:, 0] == 3.0 * i) for i in range(n)]
        mean, se = counts.mean(axis=0), counts.std(axis=0) / math.sqrt(seeds)
        assert np.all(np.abs(mean - n * w) <= 3 * se + 1e-12)

    def test_uniform_survival(self):
        n, seeds = 8, 10_000
        ps = ParticleSet(np.arange(n * 3.0).reshape(n, 3), np.full(n, 1 / n))
        counts = np.zeros((seeds, n))
        for s in range(seeds):
            idx = systematic_indices(ps.weights, np.random.default_rng(s).uniform(0, 1 / n))
            counts[s] = np.bincount(idx, minlength=n)
        np.testing.assert_allclose(counts.mean(axis=0), 1.0, atol=1e-12)


class TestGeneralizedVariance:
    def test_identical(self):
        assert generalized_variance(np.ones((10, 3)))[1] == 0.0

    def test_gaussian(self):
        sigma, n = 0.7, 100_000
        pts = np.random.default_rng(1).normal(0, sigma, (n, 3))
        _, gv = generalized_variance(pts)
        # det of a sample covariance: relative sd about sqrt(6 / n)
        assert gv == pytest.approx(sigma**6, rel=5 * math.sqrt(6 / n))

    def test_planar(self):
        rng = np.random.default_rng(2)
        pts = np.c_[rng.uniform(0, 5, (50, 2)), np.full(50, 1.3)]
        assert abs(generalized_variance(pts)[1]) < 1e-12

    def test_unbiased_covariance(self):
        pts = np.array([[0.0, 0, 0], [2, 0, 0]])
        cov, _ = generalized_variance(pts)
        assert cov[0, 0] == 2.0


class TestEllipsoid:
    def est(self, cov):
        return Estimate(np.zeros(3), np.asarray(cov, float), float(np.linalg.det(cov)), True, 1)

    def test_sphere(self):
        e = confidence_ellipsoid(self.est(np.eye(3)))
        np.testing.assert_allclose(e.lengths, math.sqrt(7.814727903), rtol=1e-9)
        assert e.lengths[0] == pytest.approx(2.7955, abs=1e-4)

    def test_diagonal(self):
        e = confidence_ellipsoid(self.est(np.diag([4.0, 1, 1])))
        assert abs(e.axes[0, 0]) == pytest.approx(1.0)
        assert e.lengths[0] == pytest.approx(2 * e.lengths[1])

    def test_point(self):
        e = confidence_ellipsoid(self.est(np.zeros((3, 3))))
        np.testing.assert_array_equal(e.lengths, 0.0)


def dense_argmax(paths, sigma, lo, hi, step):
    axes = [np.arange(a, b + step / 2, step) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    lik = likelihoods(grid, PackedPaths.from_paths(paths), sigma)
    return grid[np.argmax(lik)]


class TestRun:
    q = np.array([3.5, 3.0, 1.5])

    def crossing(self):
        return [path(through((0.5, 1.0, 0.5), self.q)), path(through((6.0, 0.5, 2.5), self.q))]

    def test_crossing_is_the_likelihood_maximum(self):
        best = dense_argmax(self.crossing(), 0.1, self.q - 1, self.q + 1, 0.05)
        assert np.linalg.norm(best - self.q) < 0.05

    def test_two_crossing_rays(self):
        cfg = LocalizerConfig(rng_seed=3)
        est, _ = run(self.crossing(), ROOM, cfg, np.random.default_rng(3))
        assert est.converged
        assert np.linalg.norm(est.mean - self.q) < 0.1

    def test_single_ray_is_not_a_fix(self):
        cfg = LocalizerConfig(rng_seed=4, max_iterations=200)
        est, _ = run([path(ray((0.5, 3.5, 1.5), (1, 0, 0), 6.0))], ROOM, cfg, np.random.default_rng(4))
        vals = np.linalg.eigvalsh(est.covariance)
        assert (not est.converged) or vals[-1] > 10 * vals[-2]

    def test_deterministic(self):
        cfg = LocalizerConfig(rng_seed=9)
        a, pa = run(self.crossing(), ROOM, cfg, np.random.default_rng(9))
        b, pb = run(self.crossing(), ROOM, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.covariance, b.covariance)
        assert (a.gv, a.converged, a.iterations_used) == (b.gv, b.converged, b.iterations_used)
        np.testing.assert_array_equal(pa.positions, pb.positions)

    def test_converged_iff_below_threshold(self):
        cfg = LocalizerConfig(rng_seed=1)
        est, _ = run(self.crossing(), ROOM, cfg, np.random.default_rng(1))
        assert est.converged == (est.gv < cfg.sigma_c)
        np.testing.assert_allclose(est.covariance, est.covariance.T, atol=1e-9)

    def test_needs_a_path(self):
        with pytest.raises(ValueError):
            run([], ROOM, LocalizerConfig(), np.random.default_rng(0))


class TestLocalizer:
    def test_no_signal_carries_estimate(self):
        loc = Localizer(ROOM, LocalizerConfig(rng_seed=2))
        first = loc.update([])
        assert first.iterations_used == 0 and not first.converged
        q = np.array([3.5, 3.0, 1.5])
        est = loc.update([path(through((0.5, 1.0, 0.5), q)), path(through((6.0, 0.5, 2.5), q))])
        again = loc.update([RayPath([], SIG)])
        np.testing.assert_array_equal(again.mean, est.mean)
        assert again.gv == est.gv and again.iterations_used == 0

    def test_reset_per_frame(self):
        q = np.array([3.5, 3.0, 1.5])
        paths = [path(through((0.5, 1.0, 0.5), q)), path(through((6.0, 0.5, 2.5), q))]
        loc = Localizer(ROOM, LocalizerConfig(rng_seed=2, reset_per_frame=True))
        loc.update(paths)
        est = loc.update(paths)
        assert np.linalg.norm(est.mean - q) < 0.5

    def test_config_validation(self):
        for bad in [dict(particle_count=1), dict(sigma_s=0.0), dict(sigma_c=-1.0),
                    dict(max_iterations=0), dict(sigma_w_floor=0.0), dict(near_field_radius=-1.0)]:
            with pytest.raises(ValueError):
                LocalizerConfig(**bad)


def test_csv_outputs():
    ps = ParticleSet(np.array([[1.0, 2, 3], [4, 5, 6]]), np.array([0.25, 0.75]), iteration=3)
    buf = io.StringIO()
    write_particles_csv([ps], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iteration,particle_id,x,y,z,weight"
    assert lines[2] == "3,1,4,5,6,0.75"
    est = Estimate(np.array([1.0, 2, 3]), np.eye(3), 1.0, True, 12)
    row = estimate_row(4, est)
    assert len(row) == len(ESTIMATE_CSV_HEADER)
    assert row[:3] == ["4", "12", "1"]
