import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from optombqc.errors import DimensionError, DomainError, GridError, RareOutcomeError
from optombqc.fock import QState, TensorSpace, annihilation, embed, single_mode
from optombqc.lindblad import expectation, partial_trace, steady_state
from optombqc.model import PhysicalParams, cubic_drive_couplings, rwa_hamiltonian, s_of_r
from optombqc.protocols import (
    SwitchingPlan,
    cubic_gate_pipeline,
    cubic_steady_setup,
    gate_target,
    homodyne_grid,
    homodyne_project,
    marginal_density,
    mechanical_fidelity,
    precool,
    run_switching,
    sample_homodyne,
    sample_streams,
    step_drives,
    switching_matrices,
    thermal_mechanics,
)
from optombqc.states import ClusterSpec, cluster_state, product_state, squeezed_vacuum, thermal_state, vacuum

from oracles import gaussian_gate_fidelity, ladder, switching_fidelity_trace


def random_spec(rng, n, with_gamma=True):
    a = np.zeros((n, n))
    for j in range(n):
        for k in range(j + 1, n):
            a[j, k] = a[k, j] = rng.integers(0, 2)
    s = rng.uniform(0.5, 3.0, n)
    g = rng.uniform(-0.3, 0.3, n) if with_gamma else np.zeros(n)
    return ClusterSpec(a, s, g)


class TestSwitchingMatrices:
    def test_trivial_node(self):
        U, V, W = switching_matrices(ClusterSpec(np.zeros((1, 1)), [1.0], [0.0]))
        assert np.allclose(U, 1) and np.allclose(V, 0) and np.allclose(W, 0)

    @given(seed=st.integers(0, 2**20), n=st.integers(1, 4))
    def test_bosonic_commutator(self, seed, n):
        spec = random_spec(np.random.default_rng(seed), n, with_gamma=False)
        U, V, W = switching_matrices(spec)
        assert np.allclose(U @ U.conj().T - V @ V.conj().T, np.eye(n), atol=1e-12)
        assert np.allclose(W, 0)

    @given(seed=st.integers(0, 2**20), n=st.integers(1, 4))
    def test_quadratic_part_diagonal(self, seed, n):
        _, _, W = switching_matrices(random_spec(np.random.default_rng(seed), n))
        assert np.allclose(W, np.diag(np.diag(W)))

    def test_two_node_step_hamiltonians(self):
        s1, s2, g1, g2, beta = 1.78, 1.6, 0.07, 0.1, 0.8
        plan = SwitchingPlan(ClusterSpec.linear([s1, s2], [g1, g2]), beta, 1.0)
        n = 5
        space = TensorSpace((2, n, n))
        a = np.kron(ladder(2), np.eye(n * n))
        b1 = np.kron(np.eye(2), np.kron(ladder(n), np.eye(n)))
        b2 = np.kron(np.eye(2), np.kron(np.eye(n), ladder(n)))
        x1, x2 = b1 + b1.conj().T, b2 + b2.conj().T
        d1 = (s1 + 1 / s1) * b1 - (s1 - 1 / s1) * b1.conj().T - 1j * s1 * x2 - 3j * g1 * s1 / np.sqrt(2) * x1 @ x1
        d2 = -1j * s2 * x1 + (s2 + 1 / s2) * b2 - (s2 - 1 / s2) * b2.conj().T - 3j * g2 * s2 / np.sqrt(2) * x2 @ x2
        for step, d in ((1, d1), (2, d2)):
            h = beta / 2 * a.conj().T @ d
            h = h + h.conj().T
            got = rwa_hamiltonian(step_drives(plan, step), space).dense()
            assert np.max(np.abs(got - h)) < 1e-12

    @pytest.mark.parametrize("s,g", [(1.0, 0.0), (1.41, 0.05), (2.3, -0.2)])
    def test_single_node_matches_cubic_recipe(self, s, g):
        beta = 0.6
        plan = SwitchingPlan(ClusterSpec(np.zeros((1, 1)), [s], [g]), beta, 1.0)
        r = (s * s - 1) / (s * s + 1)
        recipe = cubic_drive_couplings(beta * (s + 1 / s) / 2, r, g)
        assert np.allclose(step_drives(plan, 1).g, recipe.g, atol=1e-12, rtol=0)
        assert s_of_r(r) == pytest.approx(s, abs=1e-10) or r == 0


class TestStepDrives:
    def test_gaussian_cluster_has_no_quadratic_terms(self):
        plan = SwitchingPlan(ClusterSpec.linear([1.5, 1.2, 1.1], [0, 0, 0]), 1.0, 1.0)
        for step in (1, 2, 3):
            assert np.allclose(step_drives(plan, step).g[:, 2:], 0)

    def test_only_active_mode_quadratic(self):
        plan = SwitchingPlan(ClusterSpec.linear([1.78, 1.78], [0.0, 0.1]), 1.0, 10.0)
        g = step_drives(plan, 2).g
        assert np.allclose(g[0, 2:], 0) and np.all(np.abs(g[1, 2:]) > 0)
        assert np.allclose(step_drives(plan, 1).g[:, 2:], 0)

    def test_beta_linearity(self):
        spec = ClusterSpec.linear([1.3, 1.6], [0.05, 0.1])
        a = step_drives(SwitchingPlan(spec, 1.0, 1.0), 1).g
        b = step_drives(SwitchingPlan(spec, 2.0, 1.0), 1).g
        assert np.allclose(b, 2 * a)

    def test_step_range(self):
        plan = SwitchingPlan(ClusterSpec.linear([1.3, 1.6], [0, 0]), 1.0, 1.0)
        with pytest.raises(DomainError):
            step_drives(plan, 0)
        with pytest.raises(DomainError):
            step_drives(plan, 3)

    def test_plan_validation(self):
        spec = ClusterSpec.linear([1.3, 1.6], [0, 0])
        with pytest.raises(DomainError):
            SwitchingPlan(spec, 0.0, 1.0)
        with pytest.raises(DomainError):
            SwitchingPlan(spec, 1.0, 1.0, precool=True)
        assert SwitchingPlan.from_total_time(spec, 1.0, 20.0).step_duration == 10.0


class TestCubicSteadySetup:
    def test_frames_agree(self):
        g1, r, gamma, kappa = 1.0, 0.2, 0.05, 2.0
        lab = cubic_steady_setup(g1, r, gamma, kappa, (3, 40), gamma_m=0.01, nbar=0.2)
        cub = cubic_steady_setup(g1, r, gamma, kappa, (3, 20), gamma_m=0.01, nbar=0.2, frame="cubic")
        f_lab = mechanical_fidelity(lab.target, steady_state(lab.system, method="sparse"))
        f_cub = mechanical_fidelity(cub.target, steady_state(cub.system, method="sparse"))
        assert f_cub < 1
        assert f_lab == pytest.approx(f_cub, abs=2e-4)

    def test_noiseless_cubic_frame_reaches_target(self):
        cub = cubic_steady_setup(1.0, 0.4, 0.1, 5.0, (2, 10), frame="cubic")
        assert mechanical_fidelity(cub.target, steady_state(cub.system)) == pytest.approx(1, abs=1e-8)

    def test_unknown_frame(self):
        with pytest.raises(DomainError):
            cubic_steady_setup(1.0, 0.3, 0.1, 1.0, (2, 4), frame="rotating")


class TestRunSwitching:
    def test_trivial_cluster_stays_vacuum(self):
        plan = SwitchingPlan(ClusterSpec(np.zeros((1, 1)), [1.0], [0.0]), 1.0, 5.0)
        res = run_switching(plan, PhysicalParams(kappa=10.0), (2, 4), samples_per_step=6)
        assert np.allclose(res.fidelity, 1, atol=1e-12)

    def test_matches_exact_loss_channel(self):
        s, gamma = (1.2, 1.2), (0.0, 0.03)
        plan = SwitchingPlan.from_total_time(ClusterSpec.linear(s, gamma), 1.0, 20.0)
        res = run_switching(plan, PhysicalParams(kappa=10.0), (3, 10, 10), samples_per_step=11, target_tol=1.0)
        times, ref = switching_fidelity_trace(s, gamma, samples=11)
        assert np.allclose(res.times, times)
        assert np.max(np.abs(res.fidelity - ref)) < 1e-3
        assert list(res.stage[[0, 10, 11, 20]]) == ["step1", "step1", "step2", "step2"]
        # collective mode of the active step is being emptied
        occ = res.occupation
        assert occ[10] < occ[3] and occ[20] < occ[14]

    def test_cutoff_count_checked(self):
        plan = SwitchingPlan.from_total_time(ClusterSpec.linear([1.2, 1.2], [0, 0]), 1.0, 2.0)
        with pytest.raises(DimensionError):
            run_switching(plan, PhysicalParams(kappa=10.0), (3, 6))

    def test_precool_stages_and_thermal_start(self):
        spec = ClusterSpec.linear([1.1, 1.1], [0.0, 0.0])
        params = PhysicalParams(kappa=10.0, Gamma_m=1e-4, nbar=[0.3, 0.1])
        init = thermal_mechanics([0.3, 0.1], (5, 5))
        plan = SwitchingPlan.from_total_time(spec, 1.0, 4.0, precool=True, cool_duration=2.0)
        res = run_switching(plan, params, (2, 5, 5), init, samples_per_step=5, target_tol=1.0)
        assert [s[0] for s in res.stages] == ["cool1", "cool2", "step1", "step2"]
        assert res.times[-1] == pytest.approx(8.0)
        assert np.all(np.isnan(res.occupation[res.stage_slice("cool2")]))
        assert len(res.table()) == len(res.times)


class TestPrecool:
    def test_thermal_occupation_removed(self):
        space = TensorSpace((3, 12))
        rho = product_state([vacuum(single_mode(3)).to_mixed(), thermal_state(1.0, 12, allow_truncation=True)])
        res = precool(PhysicalParams(kappa=10.0), 1, 1.0, 20.0, QState.mixed(space, rho.data))
        assert res.values["n"][-1].real < 0.1
        assert res.values["n"][-1].real < 1e-3

    def test_vacuum_fixed_point(self):
        space = TensorSpace((2, 5))
        res = precool(PhysicalParams(kappa=10.0), 1, 1.0, 5.0, vacuum(space))
        assert np.allclose(res.final.dm(), vacuum(space).dm(), atol=1e-12)

    def test_duration_checked(self):
        with pytest.raises(DomainError):
            precool(PhysicalParams(kappa=1.0), 1, 1.0, 0.0, vacuum(TensorSpace((2, 3))))


class TestHomodyne:
    def test_vacuum_density_at_origin(self):
        post, density = homodyne_project(vacuum(single_mode(20)), 0, 0.0, 0.0)
        assert density == pytest.approx(np.pi**-0.5, rel=1e-10)
        assert post.space.dim == 1

    def test_product_state_untouched(self):
        a, b = squeezed_vacuum(1.3, 20), squeezed_vacuum(0.8, 20)
        post, _ = homodyne_project(product_state([a, b]), 0, 0.4, 0.3)
        assert abs(np.vdot(post.data, b.data)) == pytest.approx(1, abs=1e-12)
        mixed = product_state([a.to_mixed(), thermal_state(0.2, 20)])
        post, _ = homodyne_project(mixed, 0, 0.4, 0.3)
        assert np.allclose(post.data, thermal_state(0.2, 20).data, atol=1e-12)

    @given(m=st.floats(-2, 2), phi=st.floats(0, np.pi))
    def test_posterior_normalized(self, m, phi):
        rho = cluster_state(ClusterSpec.linear([1.2, 1.2], [0.0, 0.05]), 16, tol=1.0).to_mixed()
        post, density = homodyne_project(rho, 1, phi, m)
        assert abs(np.trace(post.data) - 1) < 1e-9
        assert density > 0

    def test_rare_outcome(self):
        with pytest.raises(RareOutcomeError):
            homodyne_project(vacuum(single_mode(20)), 0, 0.0, 8.0)

    def test_bad_mode(self):
        with pytest.raises(DimensionError):
            homodyne_project(vacuum(single_mode(4)), 1, 0.0, 0.0)

    def test_marginal_is_normalized_gaussian(self):
        grid = homodyne_grid(squeezed_vacuum(1.5, 40), 0, 0.0)
        dens = marginal_density(squeezed_vacuum(1.5, 40), 0, 0.0, grid)
        var = 1.5**2 / 2
        ref = np.exp(-grid**2 / (2 * var)) / np.sqrt(2 * np.pi * var)
        assert np.max(np.abs(dens - ref)) < 1e-8
        assert grid[-1] == pytest.approx(8 * np.sqrt(var))
        assert len(grid) == 1001

    def test_gaussian_gate_branch(self):
        # measuring p on node 1 teleports S(s)|0> up to finite-squeezing distortion
        s = 1.78
        state = cluster_state(ClusterSpec.linear([s, s], [0.0, 0.0]), 40)
        for m in (0.0, 0.3, -0.5):
            post, _ = homodyne_project(state, 0, np.pi / 2, m)
            target = gate_target(s, 0.0, m, 40)
            f = abs(np.vdot(target.data, post.data))
            assert f == pytest.approx(gaussian_gate_fidelity(s, s, m), abs=1e-6)
            assert f >= 0.95


class TestSampling:
    def test_vacuum_statistics(self):
        rho = vacuum(single_mode(20))
        grid = homodyne_grid(rho, 0, 0.0)
        xs = np.array([sample_homodyne(rho, 0, 0.0, k, grid).outcome for k in range(10_000)])
        sigma = np.sqrt(0.5)
        assert abs(xs.mean()) < 3 * sigma / 100
        assert xs.var() == pytest.approx(0.5, rel=0.05)

    def test_squeezed_variance(self):
        s = 1.6
        rho = squeezed_vacuum(s, 40)
        xs = np.array([sample_homodyne(rho, 0, np.pi / 2, k).outcome for k in range(4000)])
        assert xs.var() == pytest.approx(1 / (2 * s * s), rel=0.08)

    def test_deterministic(self):
        rho = squeezed_vacuum(1.3, 30)
        assert sample_homodyne(rho, 0, 0.3, 123) == sample_homodyne(rho, 0, 0.3, 123)

    def test_histogram_matches_marginal(self):
        rho = cluster_state(ClusterSpec.linear([1.3, 1.3], [0.0, 0.1]), 20, tol=1.0)
        grid = homodyne_grid(rho, 1, 0.0)
        xs = np.array([sample_homodyne(rho, 1, 0.0, rng, grid).outcome for rng in sample_streams(7, 10_000)])
        edges = np.quantile(xs, np.linspace(0, 1, 21))
        edges[0], edges[-1] = grid[0], grid[-1]
        fine = np.linspace(grid[0], grid[-1], 20001)
        dens = marginal_density(rho, 1, 0.0, fine)
        cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
        expected = np.diff(np.interp(edges, fine, cdf)) * len(xs)
        observed, _ = np.histogram(xs, edges)
        expected *= observed.sum() / expected.sum()
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_grid_too_narrow(self):
        rho = squeezed_vacuum(2.0, 40)
        with pytest.raises(GridError):
            sample_homodyne(rho, 0, 0.0, 0, grid=np.linspace(-0.5, 0.5, 101))

    def test_streams_independent(self):
        a = [g.random() for g in sample_streams(5, 3)]
        b = [g.random() for g in sample_streams(5, 3)]
        assert a == b and len(set(a)) == 3


class TestGate:
    def test_zero_outcome_target(self):
        from optombqc.fock import matrix_exp, number, quadratures

        n, s, g = 40, 1.4, 0.08
        big = n + 40
        _, p = quadratures(big)
        psi = squeezed_vacuum(s, big, tol=1.0).data
        psi = matrix_exp(number(big), 0.5j * np.pi).matrix @ matrix_exp(p @ p @ p, -1j * g).matrix @ psi
        psi = psi[:n] / np.linalg.norm(psi[:n])
        assert abs(np.vdot(psi, gate_target(s, g, 0.0, n).data)) == pytest.approx(1, abs=1e-10)

    @pytest.mark.parametrize("gamma", [0.0, 0.05])
    def test_noiseless_matches_gaussian_oracle(self, gamma):
        s = 2.5
        res = cubic_gate_pipeline(s, gamma, 20, 0, cutoffs=(73, 73))
        ref = np.array([gaussian_gate_fidelity(s, s, r.outcome) for r in res.records])
        assert np.allclose(res.fidelities, ref, atol=2e-3)

    def test_fidelity_grows_with_squeezing(self):
        avgs = [cubic_gate_pipeline(s, 0.0, 30, 1, cutoffs=(n, n)).average for s, n in ((1.2, 30), (1.78, 45), (2.5, 73))]
        assert avgs[0] < avgs[1] < avgs[2]

    def test_seeded_reproducible(self):
        a = cubic_gate_pipeline(1.3, 0.05, 5, 42, cutoffs=(30, 30))
        b = cubic_gate_pipeline(1.3, 0.05, 5, 42, cutoffs=(30, 30))
        assert np.array_equal(a.fidelities, b.fidelities)
        assert len(a.table()) == 5

    def test_noisy_pipeline_degrades_with_temperature(self):
        avgs = []
        for nbar in (0.0, 0.5):
            params = PhysicalParams(kappa=10.0, Gamma_m=0.01, nbar=nbar)
            avgs.append(cubic_gate_pipeline(1.1, 0.02, 10, 3, cutoffs=(2, 8, 8), params=params, tau=8.0).average)
        assert avgs[1] < avgs[0]

    def test_errors(self):
        with pytest.raises(DomainError):
            cubic_gate_pipeline(1.3, 0.0, 0, 0, cutoffs=(10, 10))
        with pytest.raises(DimensionError):
            cubic_gate_pipeline(1.3, 0.0, 1, 0, cutoffs=(10, 10, 10))
