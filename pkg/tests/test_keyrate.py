import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psqkd.channel import ChannelParams
from psqkd.constellation import Constellation, build_constellation
from psqkd.estimation import StateStatistics, gaussian_statistics
from psqkd.fockspace import (DetectorParams, KeyMapGeometry, coherent_state, displaced_thermal_state,
                             key_map_regions, observable_operators)
from psqkd.keyrate import (BOTTOM, DenseConstraints, GMapSpec, InfeasibleError, KeyRateReport, KronConstraints,
                           RateContext,
                           SdpProblem, alice_marginal, append_results_csv, asymptotic_rate, build_gmap,
                           build_problem, compute_key_rate, conditional_distribution,
                           error_correction_leakage, find_feasible, key_map_classify, objective,
                           reduced_objective, solve, solve_sdp, system_rate)
from psqkd.keyrate.problem import hermitian_basis
from psqkd.oracles import finite_difference_gradient, heterodyne_monte_carlo, sample_from_table

SYSTEM_FACTOR = 1e9 * (1 - 0.1 - 0.25) * (1 - 0.15)


def pure_loss_state(c: Constellation, T: float, dim: int) -> np.ndarray:
    """``rho_AB`` of the source-replacement state after a pure-loss channel, Bob truncated to ``dim``."""
    a, p = c.amplitudes, c.probabilities
    env = np.sqrt(1 - T) * a
    overlap_E = np.exp(-(np.abs(env)[:, None] ** 2 + np.abs(env)[None, :] ** 2) / 2
                       + env[:, None] * np.conj(env)[None, :])
    kets = np.array([coherent_state(np.sqrt(T) * ak, dim) for ak in a])
    rho = np.zeros((16 * dim, 16 * dim), complex)
    for x in range(16):
        for y in range(16):
            block = np.sqrt(p[x] * p[y]) * overlap_E[x, y] * np.outer(kets[x], kets[y].conj())
            rho[x * dim:(x + 1) * dim, y * dim:(y + 1) * dim] = block
    return rho


def random_density(n, rng, rank=None):
    M = rng.standard_normal((n, rank or n)) + 1j * rng.standard_normal((n, rank or n))
    rho = M @ M.conj().T
    return rho / np.trace(rho).real


@pytest.fixture(scope="module")
def small_setup(table1_constellation):
    det = DetectorParams(0.714, 0.064, 3)
    geom = KeyMapGeometry.at_receiver(table1_constellation.scale, 0.009, det.eta_d, 0.3)
    return det, geom, build_gmap(geom, det)


class TestProblem:
    def test_marginal_overlaps(self, table1_constellation):
        c = table1_constellation
        G = alice_marginal(c)
        d = DetectorParams(n_cutoff=30)
        kets = [coherent_state(a, d) for a in c.amplitudes]
        for i, j in [(0, 1), (3, 12), (5, 10), (7, 7)]:
            ref = np.sqrt(c.probabilities[i] * c.probabilities[j]) * np.vdot(kets[j], kets[i])
            assert G[i, j] == pytest.approx(ref, abs=1e-12)
        assert np.trace(G).real == pytest.approx(1, abs=1e-14)
        assert np.linalg.eigvalsh(G).min() > -1e-14

    def test_rank_deficient_marginal_accepted(self, table1_detector):
        c = Constellation(np.full(16, 0.3 + 0j), np.full(16, 1 / 16), 0.0, 0.1)
        stats = gaussian_statistics(0.1, 0.0, table1_detector, c)
        prob = build_problem(stats, c, table1_detector)
        assert prob.rank == 1

    def test_constraint_count(self, table1_constellation, small_setup):
        det = small_setup[0]
        prob = build_problem(gaussian_statistics(0.009, 0.019, det, table1_constellation), table1_constellation, det)
        mats, vals = prob.full_constraints()
        assert len(mats) == 64 + 256 == prob.n_constraints
        assert all(np.allclose(M, M.conj().T) for M in mats)

    def test_pure_loss_state_is_feasible(self, table1_constellation):
        det = DetectorParams(0.714, 0.064, 12)
        T = 0.2
        prob = build_problem(gaussian_statistics(T, 0.0, det, table1_constellation), table1_constellation, det)
        rho = pure_loss_state(table1_constellation, T, det.dim)
        assert np.abs(prob.residuals(rho)).max() < 1e-9

    def test_reduced_lift_consistent(self, table1_constellation, small_setup):
        det = small_setup[0]
        prob = build_problem(gaussian_statistics(0.009, 0.019, det, table1_constellation), table1_constellation, det)
        cons, b = prob.reduced_constraints()
        rng = np.random.default_rng(0)
        J = random_density(prob.rank * det.dim, rng)
        full = np.array([np.trace(M @ prob.rho_from_reduced(J)).real for M in prob.full_constraints()[0]])
        red = cons.apply(J)
        # the two parametrisations describe the same affine set: compare the residual norms at a feasible point
        J0, _, _ = find_feasible(prob)
        assert np.abs(cons.apply(J0) - b).max() < 1e-7
        assert np.abs(prob.residuals(prob.rho_from_reduced(J0))).max() < 1e-7
        assert red.shape == b.shape and full.size == prob.n_constraints

    def test_shape_validation(self, table1_constellation):
        with pytest.raises(ValueError):
            SdpProblem(table1_constellation.probabilities, np.zeros((16, 3)), np.zeros((4, 3, 3)),
                       alice_marginal(table1_constellation))

    def test_kraus_completeness(self, small_setup, table1_geometry):
        det, geom, gmap = small_setup
        K = gmap.kraus(16)
        total = K.conj().T @ K
        assert np.allclose(total, np.kron(np.eye(16), gmap.regions.sum(axis=0)))
        assert gmap.kraus_defect() <= 1e-12
        assert np.linalg.eigvalsh(gmap.regions.sum(axis=0)).max() < 1   # post-selection discards mass


class TestObjective:
    def test_block_diagonal_state_has_zero_value(self):
        d = 4
        regions = np.zeros((16, d, d), complex)
        for n in range(d):
            regions[n, n, n] = 1.0
        gmap = GMapSpec(regions)
        p = np.full(16, 1 / 16)
        rho = np.zeros((16 * d, 16 * d), complex)
        rng = np.random.default_rng(3)
        for x in range(16):
            w = rng.random(d)
            rho[x * d:(x + 1) * d, x * d:(x + 1) * d] = p[x] * np.diag(w / w.sum())
        val, _ = objective(rho, gmap)
        assert abs(val) < 1e-10

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nonnegative(self, small_setup, seed):
        gmap = small_setup[2]
        rho = random_density(16 * gmap.dim_B, np.random.default_rng(seed))
        assert objective(rho, gmap)[0] >= -1e-10

    @settings(max_examples=8, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(0.05, 0.95))
    def test_convex(self, small_setup, seed, lam):
        gmap = small_setup[2]
        rng = np.random.default_rng(seed)
        n = 16 * gmap.dim_B
        r1, r2 = random_density(n, rng), random_density(n, rng, rank=8)
        mix = objective(lam * r1 + (1 - lam) * r2, gmap)[0]
        assert mix <= lam * objective(r1, gmap)[0] + (1 - lam) * objective(r2, gmap)[0] + 1e-8

    def test_gradient_against_finite_differences(self, small_setup):
        gmap = small_setup[2]
        rng = np.random.default_rng(11)
        n = 16 * gmap.dim_B
        rho = random_density(n, rng)
        _, G = objective(rho, gmap)
        dirs = []
        for _ in range(5):
            H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            H = H + H.conj().T
            H -= np.trace(H) / n * np.eye(n)
            dirs.append(H / np.linalg.norm(H))
        fd = finite_difference_gradient(lambda X: objective(X, gmap)[0], rho, dirs, h=1e-6)
        an = np.array([np.vdot(G, D).real for D in dirs])
        assert np.max(np.abs(fd - an) / np.abs(an)) < 1e-4

    def test_reduced_matches_full(self, table1_constellation, small_setup):
        det, _, gmap = small_setup
        prob = build_problem(gaussian_statistics(0.009, 0.019, det, table1_constellation), table1_constellation, det)
        J0, _, _ = find_feasible(prob)
        f = reduced_objective(prob, gmap)
        assert f.value(J0) == pytest.approx(objective(prob.rho_from_reduced(J0), gmap)[0], abs=1e-10)

    @pytest.mark.parametrize("bad", ["negative", "trace"])
    def test_input_guards(self, small_setup, bad):
        gmap = small_setup[2]
        n = 16 * gmap.dim_B
        rho = np.eye(n) / n
        if bad == "negative":
            rho = rho.copy()
            rho[0, 0] = -0.1
            rho[1, 1] += 0.1
        else:
            rho = 2 * rho
        with pytest.raises(ValueError):
            objective(rho, gmap)


class TestSolver:
    def test_contradictory_moments_infeasible(self, table1_constellation, small_setup):
        det, _, gmap = small_setup
        ok = gaussian_statistics(0.009, 0.019, det, table1_constellation)
        sq = ok.sq.copy()
        sq[0] = 0.5 * ok.fq[0] ** 2
        bad = StateStatistics(ok.fq, ok.fp, sq, ok.sp)
        with pytest.raises(InfeasibleError):
            solve(build_problem(bad, table1_constellation, det), gmap)

    def test_certified_bracket(self, table1_constellation):
        # statistics of a known full-rank state, so that state is exactly feasible and bounds the optimum
        c = table1_constellation
        det = DetectorParams(0.714, 0.064, 4)
        d, T = det.dim, 0.05
        geom = KeyMapGeometry.at_receiver(c.scale, T, det.eta_d, 0.3)
        gmap = build_gmap(geom, det)
        pure = pure_loss_state(c, T, d)
        pure /= np.trace(pure).real
        rho_A = pure.reshape(16, d, 16, d).trace(axis1=1, axis2=3)
        bob_noise = displaced_thermal_state(0.0, 0.05, d)
        rho = 0.8 * pure + 0.2 * np.kron(rho_A, bob_noise / np.trace(bob_noise).real)
        obs = np.array(observable_operators(det))
        blocks = np.array([rho[x * d:(x + 1) * d, x * d:(x + 1) * d] for x in range(16)])
        weights = np.trace(blocks, axis1=1, axis2=2).real
        targets = np.einsum("xij,kji->xk", blocks, obs).real / weights[:, None]
        prob = SdpProblem(weights, targets, obs, rho_A)
        assert np.abs(prob.residuals(rho)).max() < 1e-12
        res = solve(prob, gmap, tol_gap=1e-3, max_iter=30)
        assert res.lower_bound <= res.feasible_value
        assert all(lb <= val + 1e-12 for val, lb in res.history)
        assert np.abs(prob.residuals(res.rho)).max() < 1e-6
        assert res.gap == pytest.approx(res.feasible_value - res.lower_bound)
        assert res.lower_bound <= objective(rho, gmap)[0] + 1e-9

    def test_dimension_mismatch(self, table1_constellation, small_setup):
        det, geom, _ = small_setup
        prob = build_problem(gaussian_statistics(0.009, 0.019, det, table1_constellation), table1_constellation, det)
        with pytest.raises(ValueError):
            solve(prob, build_gmap(geom, DetectorParams(0.714, 0.064, 5)))


class TestInnerSdp:
    def test_trace_constrained_minimum_is_smallest_eigenvalue(self):
        rng = np.random.default_rng(1)
        n = 6
        C = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        C = C + C.conj().T
        cons = DenseConstraints(np.eye(n)[None].astype(complex))
        res = solve_sdp(C, cons, np.array([1.0]), tol=1e-10)
        assert res.primal == pytest.approx(np.linalg.eigvalsh(C).min(), abs=1e-7)
        assert res.gap < 1e-7

    def test_adjoint_identity(self, table1_constellation, small_setup):
        det = small_setup[0]
        prob = build_problem(gaussian_statistics(0.009, 0.019, det, table1_constellation), table1_constellation, det)
        cons, b = prob.reduced_constraints()
        rng = np.random.default_rng(4)
        n = prob.rank * det.dim
        X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        X = X + X.conj().T
        y = rng.standard_normal(b.size)
        lhs = cons.apply(X) @ y
        rhs = np.vdot(cons.adjoint(y), X).real
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_hermitian_basis_orthonormal(self):
        B = hermitian_basis(4)
        gram = np.einsum("aij,bji->ab", B, B).real
        assert B.shape[0] == 16
        np.testing.assert_allclose(gram, np.eye(16), atol=1e-14)


class TestInnerSdpOracles:
    def test_two_by_two_unit_diagonal(self):
        # min <C, X> with X_11 = X_22 = 1 is C_11 + C_22 - 2 |C_12|
        C = np.array([[0.3, 0.4 - 0.7j], [0.4 + 0.7j, -1.1]])
        E = np.zeros((2, 2, 2), complex)
        E[0, 0, 0] = E[1, 1, 1] = 1
        res = solve_sdp(C, DenseConstraints(E), np.ones(2), tol=1e-11)
        assert res.status == "optimal"
        assert res.primal == pytest.approx(0.3 - 1.1 - 2 * abs(0.4 - 0.7j), abs=1e-8)
        assert res.dual == pytest.approx(res.primal, abs=1e-8)

    def test_complementary_slackness(self):
        rng = np.random.default_rng(8)
        n = 5
        C = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        C = C + C.conj().T
        E = np.array([np.diag(np.eye(n)[k]) for k in range(n)], complex)
        res = solve_sdp(C, DenseConstraints(E), np.ones(n), tol=1e-10)
        assert abs(np.trace(res.X @ res.Z)) < 1e-7
        assert np.linalg.eigvalsh(res.X).min() > -1e-9
        assert np.linalg.eigvalsh(res.Z).min() > -1e-9

    def test_kron_matches_dense(self):
        rng = np.random.default_rng(9)
        r, d = 3, 4
        fams = []
        for _ in range(3):
            F = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            fams.append((F + F.conj().T, hermitian_basis(r)[rng.choice(r * r, 4, replace=False)]))
        fams.append((np.eye(d), hermitian_basis(r)))
        kron = KronConstraints(fams, r, d)
        dense = DenseConstraints([np.kron(e, F) for F, E in fams for e in E])
        n = r * d
        X = random_density(n, rng)
        W = np.linalg.inv(random_density(n, rng) + 0.1 * np.eye(n))
        y = rng.standard_normal(kron.m)
        np.testing.assert_allclose(kron.apply(X), dense.apply(X), atol=1e-12)
        np.testing.assert_allclose(kron.adjoint(y), dense.adjoint(y), atol=1e-12)
        np.testing.assert_allclose(kron.schur(X, W), dense.schur(X, W), rtol=1e-10, atol=1e-10)


class TestConditionalTable:
    def test_row_stochastic(self, table1_constellation, table1_detector, table1_geometry):
        table = conditional_distribution(ChannelParams(0.009, 0.019), table1_detector, table1_constellation,
                                         table1_geometry)
        assert table.shape == (16, 17)
        np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(table >= 0)

    def test_noiseless_slicing(self):
        c = build_constellation(0.0, 2000.0)       # states far apart compared with the noise
        det = DetectorParams(1.0, 0.0, 4)
        geom = KeyMapGeometry.at_receiver(c.scale, 1.0, 1.0, 0.0)
        table = conditional_distribution(ChannelParams(1.0, 0.0), det, c, geom)
        np.testing.assert_allclose(np.diag(table[:, :16]), 1.0, atol=1e-9)

    def test_matches_channel_sampling(self, table1_constellation, table1_detector, table1_geometry):
        n = 400_000
        ch = ChannelParams(0.009, 0.019)
        table = conditional_distribution(ch, table1_detector, table1_constellation, table1_geometry)
        labels, zeta = heterodyne_monte_carlo(table1_constellation, ch.T, ch.xi, table1_detector, n, seed=5)
        z = key_map_classify(zeta, table1_geometry)
        joint = np.zeros_like(table)
        np.add.at(joint, (labels, z), 1.0)
        expected = table1_constellation.probabilities[:, None] * table * n
        sigma = np.sqrt(expected * (1 - expected / n))
        assert np.all(np.abs(joint - expected) < 4 * sigma + 1e-9)

    def test_table_sampler(self, table1_constellation):
        table = np.tile(np.r_[np.full(16, 0.05), 0.2], (16, 1))
        x, z = sample_from_table(table, table1_constellation.probabilities, 100_000, seed=2)
        assert abs(np.mean(z == 16) - 0.2) < 4 * np.sqrt(0.16 / 100_000)

    def test_pass_probability_two_routes(self, table1_constellation, table1_geometry):
        # erf table versus discard-operator expectations on displaced thermal inputs
        det = DetectorParams(0.714, 0.064, 12)
        T, xi = 0.009, 0.019
        _, disc = key_map_regions(table1_geometry, det)
        table = conditional_distribution(ChannelParams(T, xi), det, table1_constellation, table1_geometry)
        p = table1_constellation.probabilities
        route_table = float(p @ (1 - table[:, BOTTOM]))
        route_ops = 1 - sum(pk * np.trace(displaced_thermal_state(np.sqrt(T) * a, T * xi / 2, det.dim) @ disc).real
                            for pk, a in zip(p, table1_constellation.amplitudes))
        assert route_table == pytest.approx(route_ops, abs=1e-9)


class TestClassify:
    geom = KeyMapGeometry(0.5, 0.1)

    def test_outer_corner(self):
        assert key_map_classify([1.5 + 1.5j], self.geom)[0] == 0
        assert key_map_classify([-1.5 - 1.5j], self.geom)[0] == 15

    def test_axis_strip_discarded(self):
        z = key_map_classify([0.05 + 0.7j, 0.7 - 0.05j, 0.0], self.geom)
        assert np.all(z == BOTTOM)

    def test_detection_limit(self):
        g = KeyMapGeometry(0.5, 0.0, detection_limit=2.0)
        assert key_map_classify([2.5 + 0.5j], g)[0] == BOTTOM

    def test_boundary_goes_to_larger_index(self):
        # Re = 2 alpha0 is shared by columns 0 and 1
        assert key_map_classify([1.0 + 0.5j], self.geom)[0] == 5

    @settings(max_examples=200, deadline=None)
    @given(x=st.floats(-3, 3), y=st.floats(-3, 3))
    def test_agrees_with_rectangles(self, x, y):
        z = key_map_classify([x + 1j * y], self.geom)[0]
        inside = [k for k, (xl, xu, yl, yu) in enumerate(self.geom.rectangles())
                  if xl <= x <= xu and yl <= y <= yu and abs(x) >= 0.1 and abs(y) >= 0.1]
        if not inside:
            assert z == BOTTOM
        else:
            assert z == max(inside)


class TestLeakageAndRates:
    def test_zero_efficiency(self, table1_constellation, table1_detector, table1_geometry):
        table = conditional_distribution(ChannelParams(0.009, 0.019), table1_detector, table1_constellation,
                                         table1_geometry)
        delta, p_pass, h_z, mi = error_correction_leakage(table, table1_constellation.probabilities, 0.0)
        assert delta == pytest.approx(h_z)
        assert 0 < p_pass < 1 and 0 < mi < h_z

    def test_noiseless_uniform(self):
        table = np.hstack([np.eye(16), np.zeros((16, 1))])
        delta, p_pass, h_z, mi = error_correction_leakage(table, np.full(16, 1 / 16), 0.95)
        assert h_z == pytest.approx(4.0) and mi == pytest.approx(4.0)
        assert delta == pytest.approx(0.05 * 4.0)
        assert p_pass == pytest.approx(1.0)

    def test_everything_discarded(self):
        table = np.zeros((16, 17))
        table[:, BOTTOM] = 1
        with pytest.raises(ValueError):
            error_correction_leakage(table, np.full(16, 1 / 16), 0.95)

    def test_asymptotic_rate(self):
        assert asymptotic_rate(0.001, 0.0005, 0.8) == (pytest.approx(0.0006), False)
        assert asymptotic_rate(0.001, 0.01, 0.8) == (0.0, True)
        assert asymptotic_rate(0.002, 0.0, 0.5) == (0.002, False)

    @pytest.mark.parametrize("r, kbps", [(5.832e-4, 322.2), (3.103e-4, 171.4)])
    def test_system_rate_reference_points(self, r, kbps):
        assert SYSTEM_FACTOR == pytest.approx(5.525e8)
        assert system_rate(r, 1e9, 0.1, 0.25, 0.15) / 1e3 == pytest.approx(kbps, abs=0.1)

    def test_system_rate_zero_and_errors(self):
        assert system_rate(0.0, 1e9, 0.1, 0.25, 0.15) == 0.0
        with pytest.raises(ValueError):
            system_rate(1e-3, 1e9, 0.6, 0.5, 0.1)
        with pytest.raises(ValueError):
            system_rate(1e-3, 1e9, 0.1, 0.2, 1.5)


@pytest.mark.slow
class TestMonotonicity:
    @staticmethod
    def rate(**kw):
        return compute_key_rate(RateContext(n_cutoff=2, delta0=0.3, tol_gap=1e-4, max_iter=40, **kw)).r_infty

    def test_rate_falls_with_excess_noise(self):
        rates = [self.rate(xi=xi) for xi in (0.005, 0.019, 0.04)]
        assert rates[0] > rates[1] > rates[2] > 0

    def test_rate_falls_with_electronic_noise(self):
        rates = [self.rate(nu_el=v) for v in (0.0, 0.064, 0.15)]
        assert rates[0] > rates[1] > rates[2]


class TestReports:
    @pytest.fixture(scope="class")
    @staticmethod
    def report():
        # cheap point: tiny cutoff and loose gap
        return compute_key_rate(RateContext(n_cutoff=2, T=0.009, delta0=0.3, tol_gap=1e-3, max_iter=15))

    def test_invariants(self, report):
        assert report.relent_lower_bound <= report.feasible_value
        assert report.gap >= 0
        assert report.r_infty >= 0
        assert report.r_system == pytest.approx(report.r_infty * SYSTEM_FACTOR)
        assert report.eps == 1e-9

    def test_json_excludes_timing_by_default(self, report):
        d = json.loads(report.to_json())
        assert "elapsed_s" not in d
        assert "elapsed_s" in report.to_dict(include_timing=True)
        assert d["inputs"]["n_cutoff"] == 2

    def test_results_csv(self, report, tmp_path):
        path = tmp_path / "results.csv"
        append_results_csv(path, [report], header={"config_hash": "abc"})
        append_results_csv(path, [report], header={"config_hash": "ignored"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# config_hash: abc"
        assert lines[1] == "distance_km,T,xi,delta0,r_infty,r_system,gap,n_cutoff"
        assert len(lines) == 4
