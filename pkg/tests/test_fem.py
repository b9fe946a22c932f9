import numpy as np
import pytest
from scipy.linalg import eigh

from frfupdate import (FrequencyGrid, ParameterPoint, Segment, StructuralModel,
                       apply_parameters, frf_amplitudes, frf_response,
                       generate_chain_model, load_matrix_bundle,
                       natural_frequencies, save_matrix_bundle)
from frfupdate.exceptions import BundleFormatError, SolverError


def modal_frf(sys, force, omega, damping_a, damping_b):
    """Independent oracle: modal superposition with the full eigenbasis."""
    lam, phi = eigh(sys.k_hat, sys.m_hat)
    q = phi.T @ force
    denom = lam - omega**2 + 1j * omega * (damping_a + damping_b * lam)
    return phi @ (q / denom)


def random_chain(rng, max_dof=20):
    n = int(rng.integers(2, max_dof + 1))
    m = int(rng.integers(1, n + 1))
    return generate_chain_model(
        n, m,
        mass_per_node=float(rng.uniform(0.5, 2.0)),
        stiffness_per_spring=float(rng.uniform(100.0, 5000.0)),
        damping_a=float(rng.uniform(0.0, 0.05)),
        damping_b=float(rng.uniform(0.0, 1e-3)),
    )


def random_theta(rng, m):
    return ParameterPoint(alpha=rng.uniform(-0.8, 1.0, m), gamma=rng.uniform(-0.5, 1.0, m))


class TestChainGeneration:
    def test_single_oscillator(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        assert np.array_equal(model.baseline_stiffness(), [[1.0]])
        assert np.array_equal(model.baseline_mass(), [[1.0]])

    def test_two_mass_chain_hand_assembly(self):
        model = generate_chain_model(2, 1, 1.0, 1.0, 0.0, 0.0)
        assert np.array_equal(model.baseline_stiffness(), [[2.0, -1.0], [-1.0, 1.0]])
        assert np.array_equal(model.baseline_mass(), np.eye(2))

    def test_six_segments_hold_one_spring_each(self):
        split = generate_chain_model(6, 6, 1.3, 7.0)
        whole = generate_chain_model(6, 1, 1.3, 7.0)
        for seg in split.segments:
            # one spring contributes at most a 2x2 block
            assert np.count_nonzero(seg.stiffness) <= 4
        assert np.allclose(split.baseline_stiffness(), whole.baseline_stiffness())
        assert np.allclose(split.baseline_mass(), whole.baseline_mass())

    def test_invalid_counts_rejected(self):
        with pytest.raises(ValueError):
            generate_chain_model(2, 3)
        with pytest.raises(ValueError):
            generate_chain_model(3, 0)
        with pytest.raises(ValueError):
            generate_chain_model(3, 1, mass_per_node=-1.0)

    def test_default_sensors_and_force(self):
        model = generate_chain_model(4, 2)
        assert model.sensor_dofs == (0, 1, 2, 3)
        assert np.array_equal(model.force_pattern, np.ones(4))


class TestParameterPoint:
    def test_rejects_components_at_or_below_minus_one(self):
        with pytest.raises(ValueError):
            ParameterPoint(alpha=[-1.0], gamma=[0.0])
        with pytest.raises(ValueError):
            ParameterPoint(alpha=[0.0], gamma=[-1.5])

    def test_from_vector_mass_split(self):
        p = ParameterPoint.from_vector(np.array([0.1, 0.2, -0.3, 0.4]), 2, update_mass=True)
        assert np.array_equal(p.alpha, [0.1, 0.2])
        assert np.array_equal(p.gamma, [-0.3, 0.4])
        q = ParameterPoint.from_vector(np.array([0.1, 0.2]), 2)
        assert np.array_equal(q.gamma, [0.0, 0.0])


class TestApplyParameters:
    def test_zero_variation_is_baseline(self, golden_model):
        theta = ParameterPoint(alpha=np.zeros(6), gamma=np.zeros(6))
        sys = apply_parameters(golden_model, theta)
        assert np.allclose(sys.k_hat, golden_model.baseline_stiffness())
        assert np.allclose(sys.m_hat, golden_model.baseline_mass())

    def test_single_dof_scaling(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[-0.5], gamma=[0.0]))
        assert np.allclose(sys.k_hat, [[0.5]])

    def test_damping_is_proportional(self, golden_model, golden_theta):
        sys = apply_parameters(golden_model, golden_theta)
        expected = golden_model.damping_a * sys.m_hat + golden_model.damping_b * sys.k_hat
        assert np.array_equal(sys.c_hat, expected)

    def test_golden_matches_scaled_spring_reassembly(self, golden_model, golden_theta):
        # independent route: rebuild the chain spring by spring with scaled constants
        k = 1000.0
        scaled = k * (1.0 + golden_theta.alpha)
        n = 6
        expected = np.zeros((n, n))
        for j, kj in enumerate(scaled):
            expected[j, j] += kj
            if j > 0:
                expected[j - 1, j - 1] += kj
                expected[j, j - 1] -= kj
                expected[j - 1, j] -= kj
        sys = apply_parameters(golden_model, golden_theta)
        assert np.allclose(sys.k_hat, expected, rtol=1e-12, atol=0)

    def test_affine_in_each_coefficient_dyadic_exact(self):
        model = generate_chain_model(4, 4, 1.0, 2.0, 0.0, 0.0)
        alpha = np.array([0.5, -0.25, 0.0, 0.75])
        delta = 0.5
        base = apply_parameters(model, ParameterPoint(alpha=alpha, gamma=np.zeros(4)))
        for i in range(4):
            bumped = alpha.copy()
            bumped[i] += delta
            sys = apply_parameters(model, ParameterPoint(alpha=bumped, gamma=np.zeros(4)))
            assert np.array_equal(sys.k_hat - base.k_hat, delta * model.segments[i].stiffness)

    def test_affine_in_each_coefficient_generic(self):
        rng = np.random.default_rng(3)
        model = random_chain(rng, max_dof=10)
        m = model.n_segments
        alpha = rng.uniform(-0.5, 0.5, m)
        delta = 0.37
        base = apply_parameters(model, ParameterPoint(alpha=alpha, gamma=np.zeros(m)))
        for i in range(m):
            bumped = alpha.copy()
            bumped[i] += delta
            sys = apply_parameters(model, ParameterPoint(alpha=bumped, gamma=np.zeros(m)))
            diff = sys.k_hat - base.k_hat
            assert np.allclose(diff, delta * model.segments[i].stiffness,
                               rtol=1e-12, atol=1e-12)

    def test_updated_matrices_stay_definite(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            model = random_chain(rng, max_dof=8)
            theta = random_theta(rng, model.n_segments)
            sys = apply_parameters(model, theta)
            assert np.allclose(sys.k_hat, sys.k_hat.T)
            np.linalg.cholesky(sys.m_hat)  # positive definite
            assert np.linalg.eigvalsh(sys.k_hat)[0] > -1e-9

    def test_dimension_mismatch(self, golden_model):
        with pytest.raises(ValueError):
            apply_parameters(golden_model, ParameterPoint(alpha=[0.1], gamma=[0.0]))


class TestFrfResponse:
    def test_static_deflection(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[0.0], gamma=[0.0]))
        z = frf_response(sys, np.array([1.0]), 0.0)
        assert z == pytest.approx(1.0)

    def test_scalar_formula_above_resonance(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[0.0], gamma=[0.0]))
        z = frf_response(sys, np.array([1.0]), 2.0)
        assert z[0] == pytest.approx(-1.0 / 3.0, abs=1e-14)

    def test_matches_modal_superposition_near_resonance(self):
        model = generate_chain_model(2, 2, 1.0, 1.0, damping_a=0.01, damping_b=1e-4)
        theta = ParameterPoint(alpha=np.zeros(2), gamma=np.zeros(2))
        sys = apply_parameters(model, theta)
        lam = eigh(sys.k_hat, sys.m_hat, eigvals_only=True)
        omega = np.sqrt(lam[0]) * 1.001
        z = frf_response(sys, model.force_pattern, omega)
        oracle = modal_frf(sys, model.force_pattern, omega, 0.01, 1e-4)
        assert np.linalg.norm(z - oracle) <= 1e-8 * np.linalg.norm(oracle)

    def test_undamped_reality(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.integers(2, 10))
            model = generate_chain_model(n, 1, 1.0, 1.0, 0.0, 0.0)
            sys = apply_parameters(
                model, ParameterPoint(alpha=[float(rng.uniform(-0.5, 1.0))], gamma=[0.0]))
            omega = float(rng.uniform(0.05, 0.5))  # below first resonance band
            z = frf_response(sys, model.force_pattern, omega)
            assert np.abs(z.imag).max() <= 1e-10 * np.abs(z).max()

    def test_reciprocity(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            model = random_chain(rng, max_dof=12)
            theta = random_theta(rng, model.n_segments)
            sys = apply_parameters(model, theta)
            n = model.n_dof
            i, j = rng.choice(n, size=2, replace=False)
            omega = float(rng.uniform(0.1, 2.0))
            ei = np.zeros(n); ei[i] = 1.0
            ej = np.zeros(n); ej[j] = 1.0
            zi = frf_response(sys, ej, omega)[i]
            zj = frf_response(sys, ei, omega)[j]
            assert abs(zi - zj) <= 1e-10 * max(abs(zi), abs(zj))

    def test_singular_system_raises(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[0.0], gamma=[0.0]))
        with pytest.warns(Warning):
            with pytest.raises(SolverError, match="omega"):
                frf_response(sys, np.array([1.0]), 1.0)  # exactly at resonance, undamped


class TestFrfAmplitudes:
    def test_static_amplitude(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        theta = ParameterPoint(alpha=[0.0], gamma=[0.0])
        grid = FrequencyGrid(freqs_hz=np.array([1e-9]))
        amps = frf_amplitudes(model, theta, grid)
        assert amps[0, 0] == pytest.approx(1.0, rel=1e-9)

    def test_invariant_to_force_sign(self, golden_model, golden_theta, golden_grid):
        flipped = StructuralModel(
            n_dof=golden_model.n_dof, segments=golden_model.segments,
            damping_a=golden_model.damping_a, damping_b=golden_model.damping_b,
            sensor_dofs=golden_model.sensor_dofs,
            force_pattern=-golden_model.force_pattern,
        )
        a1 = frf_amplitudes(golden_model, golden_theta, golden_grid)
        a2 = frf_amplitudes(flipped, golden_theta, golden_grid)
        assert np.allclose(a1, a2, rtol=1e-12)

    def test_matches_per_frequency_responses(self, golden_model, golden_theta, golden_grid):
        amps = frf_amplitudes(golden_model, golden_theta, golden_grid)
        sys = apply_parameters(golden_model, golden_theta)
        for j, w in enumerate(golden_grid.omegas_rad):
            z = frf_response(sys, golden_model.force_pattern, w)
            assert np.allclose(amps[:, j], np.abs(z[list(golden_model.sensor_dofs)]),
                               rtol=1e-10)


class TestNaturalFrequencies:
    def test_single_oscillator(self):
        model = generate_chain_model(1, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[0.0], gamma=[0.0]))
        f = natural_frequencies(sys, 1)
        assert f[0] == pytest.approx(1.0 / (2 * np.pi))

    def test_two_dof_closed_form(self):
        model = generate_chain_model(2, 1, 1.0, 1.0, 0.0, 0.0)
        sys = apply_parameters(model, ParameterPoint(alpha=[0.0], gamma=[0.0]))
        f = natural_frequencies(sys, 2)
        lam = np.array([(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])
        assert np.allclose(f, np.sqrt(lam) / (2 * np.pi), rtol=1e-12)

    def test_stiffness_scaling_homogeneity(self, golden_model):
        c = 2.0
        base = apply_parameters(golden_model, ParameterPoint(alpha=np.zeros(6), gamma=np.zeros(6)))
        scaled = apply_parameters(
            golden_model, ParameterPoint(alpha=np.full(6, c - 1.0), gamma=np.zeros(6)))
        f0 = natural_frequencies(base, 3)
        f1 = natural_frequencies(scaled, 3)
        assert np.allclose(f1, np.sqrt(c) * f0, rtol=1e-12)


class TestMatrixBundle:
    def test_round_trip(self, tmp_path):
        model = generate_chain_model(2, 1, 1.0, 1.0, 0.01, 1e-4)
        path = tmp_path / "chain.bundle"
        save_matrix_bundle(model, path)
        loaded = load_matrix_bundle(path)
        assert loaded.n_dof == model.n_dof
        assert loaded.n_segments == model.n_segments
        assert loaded.sensor_dofs == model.sensor_dofs
        assert np.array_equal(loaded.force_pattern, model.force_pattern)
        for a, b in zip(loaded.segments, model.segments):
            assert np.array_equal(a.stiffness, b.stiffness)
            assert np.array_equal(a.mass, b.mass)

    def test_out_of_range_entry(self, tmp_path):
        path = tmp_path / "bad.bundle"
        path.write_text(
            "n_dof 2 segments 1 damping_a 0 damping_b 0\n"
            "K 0\n0 0 1\n5 0 1\nM 0\n0 0 1\n1 1 1\nsensors 0\nforce 1 0\n"
        )
        with pytest.raises(BundleFormatError, match=r"\(5, 0\)"):
            load_matrix_bundle(path)

    def test_missing_segments_count(self, tmp_path):
        path = tmp_path / "bad.bundle"
        path.write_text(
            "n_dof 2 damping_a 0 damping_b 0\n"
            "K 0\n0 0 1\nM 0\n0 0 1\n1 1 1\nsensors 0\nforce 1 0\n"
        )
        with pytest.raises(BundleFormatError, match="header"):
            load_matrix_bundle(path)

    def test_asymmetric_matrix_rejected(self, tmp_path):
        path = tmp_path / "asym.bundle"
        path.write_text(
            "n_dof 2 segments 1 damping_a 0 damping_b 0\n"
            "K 0\n0 0 2\n0 1 -1\n1 1 1\n"  # (1, 0) entry missing
            "M 0\n0 0 1\n1 1 1\nsensors 0 1\nforce 1 1\n"
        )
        with pytest.raises(BundleFormatError, match="symmetric"):
            load_matrix_bundle(path)

    def test_missing_block_named(self, tmp_path):
        path = tmp_path / "short.bundle"
        path.write_text(
            "n_dof 1 segments 2 damping_a 0 damping_b 0\n"
            "K 0\n0 0 1\nM 0\n0 0 1\nK 1\n0 0 1\n"
            "sensors 0\nforce 1\n"
        )
        with pytest.raises(BundleFormatError, match="M 1"):
            load_matrix_bundle(path)


class TestFrfOracleSweep:
    def test_modal_superposition_sweep(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            model = random_chain(rng, max_dof=20)
            theta = random_theta(rng, model.n_segments)
            sys = apply_parameters(model, theta)
            lam = eigh(sys.k_hat, sys.m_hat, eigvals_only=True)
            omega = float(rng.uniform(0.1, 1.5) * np.sqrt(lam[-1]))
            z = frf_response(sys, model.force_pattern, omega)
            oracle = modal_frf(sys, model.force_pattern, omega,
                               model.damping_a, model.damping_b)
            assert np.linalg.norm(z - oracle) <= 1e-8 * np.linalg.norm(oracle)
