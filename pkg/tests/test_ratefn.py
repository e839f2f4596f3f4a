"""Tests for the least-norm control energy solver."""
import numpy as np
import pytest

from burgerslab.grids import (
    Control,
    DimensionError,
    Grid,
    SpaceField,
    SpaceTimeField,
    ht_norm,
)
from burgerslab.ratefn import (
    TIKHONOV_LAMBDAS,
    RateResult,
    SkeletonContext,
    apply_adjoint,
    apply_forward,
    rate_value,
)
from burgerslab.solvers import SigmaSpec, solve_skeleton


def make_ctx(nx=32, nt=256, T=0.25):
    g = Grid(nx=nx, nt=nt, T=T)
    u0 = SpaceField.sample(g, lambda x: np.sin(np.pi * x))
    return g, SkeletonContext.build(u0, g, SigmaSpec.cosine(1.0))


def smooth_control(g, seed, target_ht):
    r = np.random.default_rng(seed)
    xi = g.x_interior()
    tl = g.t_nodes()[:-1]
    vals = np.zeros((g.nt, g.nx - 1))
    for m in range(1, 4):
        for n in range(3):
            vals += (
                r.normal()
                * np.sin(m * np.pi * xi)[None, :]
                * np.cos(n * np.pi * tl / g.T)[:, None]
            )
    vals *= target_ht / ht_norm(vals, g)
    return Control(vals, g)


def random_field(g, seed):
    r = np.random.default_rng(seed)
    frames = np.zeros((g.nt + 1, g.nx + 1))
    frames[1:, 1:-1] = r.normal(size=(g.nt, g.nx - 1))
    return SpaceTimeField(frames, g)


# ------------------------------------------------------------ forward map


class TestApplyForward:
    def test_zero_control_zero_field(self):
        g, ctx = make_ctx()
        out = apply_forward(Control.zero(g), ctx)
        assert np.array_equal(out.frames, np.zeros_like(out.frames))

    def test_matches_stepping_solver_bitwise(self):
        g, ctx = make_ctx()
        v = smooth_control(g, 1, 0.8)
        fwd = apply_forward(v, ctx)
        ref = solve_skeleton(ctx.u0, g, v, ctx.sigma, ctx.u_det, ctx.cfg)
        assert np.array_equal(fwd.frames, ref.frames)

    def test_additivity(self):
        g, ctx = make_ctx()
        v1 = smooth_control(g, 5, 0.6)
        v2 = smooth_control(g, 6, 0.9)
        both = apply_forward(Control(v1.values + v2.values, g), ctx)
        split = apply_forward(v1, ctx).frames + apply_forward(v2, ctx).frames
        scale = np.abs(split).max()
        assert np.abs(both.frames - split).max() <= 1e-9 * scale

    def test_grid_mismatch(self):
        g, ctx = make_ctx()
        g2 = Grid(nx=16, nt=256, T=0.25)
        with pytest.raises(DimensionError):
            apply_forward(Control.zero(g2), ctx)


# ------------------------------------------------------------ adjoint map


class TestApplyAdjoint:
    def test_zero_field_zero_control(self):
        g, ctx = make_ctx()
        zero = SpaceTimeField(np.zeros((g.nt + 1, g.nx + 1)), g)
        out = apply_adjoint(zero, ctx)
        assert np.array_equal(out.values, np.zeros_like(out.values))

    @pytest.mark.parametrize("seed", [2, 3, 4])
    def test_pairing_identity(self, seed):
        # <A v, g>_{L2(dt dx)} == <v, A* g>_{H_T} on random data
        g, ctx = make_ctx()
        r = np.random.default_rng(seed)
        v = Control(r.normal(size=(g.nt, g.nx - 1)), g)
        gf = random_field(g, seed + 100)
        av = apply_forward(v, ctx)
        atg = apply_adjoint(gf, ctx)
        lhs = g.dt * g.dx * np.sum(av.frames[1:, 1:-1] * gf.frames[1:, 1:-1])
        rhs = g.dt * np.sum((v.values * atg.values) @ g.interior_weights())
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)

    def test_linearity(self):
        g, ctx = make_ctx()
        f1 = random_field(g, 21)
        f2 = random_field(g, 22)
        combo = SpaceTimeField(2.0 * f1.frames - 0.5 * f2.frames, g)
        direct = apply_adjoint(combo, ctx).values
        split = 2.0 * apply_adjoint(f1, ctx).values - 0.5 * apply_adjoint(f2, ctx).values
        assert np.allclose(direct, split, rtol=1e-12, atol=1e-15)

    def test_grid_mismatch(self):
        g, ctx = make_ctx()
        g2 = Grid(nx=16, nt=256, T=0.25)
        zero = SpaceTimeField(np.zeros((g2.nt + 1, g2.nx + 1)), g2)
        with pytest.raises(DimensionError):
            apply_adjoint(zero, ctx)


# ----------------------------------------------------------- energy value


class TestRateValue:
    def test_zero_target(self):
        g, ctx = make_ctx()
        zero = SpaceTimeField(np.zeros((g.nt + 1, g.nx + 1)), g)
        res = rate_value(zero, ctx)
        assert res.value == 0.0
        assert res.iterations == 0
        assert res.attained
        assert np.array_equal(res.v_star.values, np.zeros((g.nt, g.nx - 1)))

    def test_round_trip_recovers_least_norm(self):
        g, ctx = make_ctx()
        v0 = smooth_control(g, 11, 0.7)
        f = apply_forward(v0, ctx)
        res = rate_value(f, ctx, tol=1e-6, max_iter=2000)
        bound = 0.5 * ht_norm(v0, g) ** 2
        assert res.attained
        assert res.residual <= 1e-6
        assert res.value <= bound + 1e-4
        assert res.value == pytest.approx(bound, rel=1e-4)
        assert res.value == pytest.approx(0.5 * ht_norm(res.v_star, g) ** 2, rel=1e-12)

    def test_residual_history_monotone(self):
        g, ctx = make_ctx()
        f = apply_forward(smooth_control(g, 11, 0.7), ctx)
        res = rate_value(f, ctx, tol=1e-6, max_iter=2000)
        h = res.residual_history
        assert len(h) == res.iterations + 1
        assert all(b <= a * (1 + 1e-10) for a, b in zip(h, h[1:]))

    def test_quadratic_homogeneity(self):
        g, ctx = make_ctx()
        f = apply_forward(smooth_control(g, 11, 0.7), ctx)
        res1 = rate_value(f, ctx, tol=1e-6, max_iter=2000)
        res3 = rate_value(SpaceTimeField(3.0 * f.frames, g), ctx, tol=1e-6, max_iter=2000)
        assert res3.value == pytest.approx(9.0 * res1.value, rel=1e-6)
        # minimizer scales linearly, measured in the control norm it lives in
        gap = ht_norm(res3.v_star.values - 3.0 * res1.v_star.values, g)
        assert gap <= 1e-6 * ht_norm(3.0 * res1.v_star.values, g)

    def test_noise_target_not_attained(self):
        g, ctx = make_ctx(nx=24, nt=128)
        bad = random_field(g, 77)
        res = rate_value(bad, ctx, tol=1e-6, max_iter=60)
        assert not res.attained
        assert res.residual > 1e-6
        assert res.tikhonov_lambda in TIKHONOV_LAMBDAS
        assert np.isfinite(res.value)

    def test_fallback_can_be_disabled(self):
        g, ctx = make_ctx(nx=24, nt=128)
        res = rate_value(random_field(g, 77), ctx, tol=1e-6, max_iter=30, fallback=False)
        assert not res.attained
        assert res.tikhonov_lambda is None
        assert res.iterations == 30

    def test_validation(self):
        g, ctx = make_ctx(nx=16, nt=32, T=0.25)
        ok = SpaceTimeField(np.zeros((g.nt + 1, g.nx + 1)), g)
        with pytest.raises(ValueError):
            rate_value(ok, ctx, tol=0.0)
        with pytest.raises(ValueError):
            rate_value(ok, ctx, max_iter=0)
        bad0 = np.zeros((g.nt + 1, g.nx + 1))
        bad0[0, 3] = 1.0
        with pytest.raises(ValueError):
            rate_value(SpaceTimeField(bad0, g), ctx)
        badw = np.zeros((g.nt + 1, g.nx + 1))
        badw[2, 0] = 1.0
        with pytest.raises(ValueError):
            rate_value(SpaceTimeField(badw, g), ctx)
        g2 = Grid(nx=16, nt=64, T=0.25)
        other = SpaceTimeField(np.zeros((g2.nt + 1, g2.nx + 1)), g2)
        with pytest.raises(DimensionError):
            rate_value(other, ctx)

    def test_result_serializes(self):
        g, ctx = make_ctx(nx=16, nt=32, T=0.25)
        zero = SpaceTimeField(np.zeros((g.nt + 1, g.nx + 1)), g)
        res = rate_value(zero, ctx)
        d = res.to_json_dict(v_star_csv_path="v.csv")
        assert d == {
            "value": 0.0,
            "residual": 0.0,
            "iterations": 0,
            "attained": True,
            "tikhonov_lambda": None,
            "v_star_csv_path": "v.csv",
        }
        assert isinstance(res, RateResult)
