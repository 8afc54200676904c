import numpy as np
import pytest

from polcomp.polmath import (
    A,
    BASES,
    D,
    DA,
    H,
    HV,
    PaddleController,
    V,
    apply_local,
    haar_unitary,
    is_density_matrix,
    is_unitary,
    outcome_probs,
    paddle_unitary,
    phi_plus,
    retarder_unitary,
    rotation,
    single_arm_probs,
    werner_state,
)


def oracle_retarder(delta, theta):
    """Independent construction: rotate, retard, rotate back."""
    c, s = np.cos(theta), np.sin(theta)
    r = np.array([[c, -s], [s, c]], dtype=complex)
    return r @ np.array([[1, 0], [0, np.exp(1j * delta)]]) @ np.linalg.inv(r)


def oracle_probs(rho, kets_a, kets_b):
    """Brute-force projector expectation values."""
    out = []
    for ka in kets_a:
        for kb in kets_b:
            proj = np.outer(np.kron(ka, kb), np.kron(ka, kb).conj())
            out.append(np.trace(proj @ rho).real)
    return np.array(out)


class TestRetarder:
    def test_zero_retardance_is_identity(self):
        for theta in (0.0, 0.3, 1.2):
            assert np.allclose(retarder_unitary(0.0, theta), np.eye(2), atol=1e-12)

    def test_half_wave_at_45_swaps_h_and_v(self):
        u = retarder_unitary(np.pi, np.pi / 4)
        out = u @ H
        assert abs(np.vdot(V, out)) ** 2 == pytest.approx(1.0, abs=1e-12)
        assert abs(np.vdot(H, out)) ** 2 == pytest.approx(0.0, abs=1e-12)

    def test_quarter_wave_at_45_splits_h(self):
        # oracle: |<H|U|H>|^2 = |<V|U|H>|^2 = 1/2 by direct matrix product
        u_oracle = oracle_retarder(np.pi / 2, np.pi / 4)
        out = u_oracle @ H
        assert abs(out[0]) ** 2 == pytest.approx(0.5, abs=1e-12)
        probs = single_arm_probs(H, retarder_unitary(np.pi / 2, np.pi / 4), HV)
        assert probs == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_matches_oracle_on_random_parameters(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            delta, theta = rng.uniform(0, 2 * np.pi, 2)
            assert np.allclose(
                retarder_unitary(delta, theta), oracle_retarder(delta, theta), atol=1e-12
            )

    def test_orientation_period_is_pi(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            delta, theta = rng.uniform(0, 2 * np.pi, 2)
            state = haar_unitary(rng) @ H
            for basis in (HV, DA):
                p1 = single_arm_probs(state, retarder_unitary(delta, theta), basis)
                p2 = single_arm_probs(state, retarder_unitary(delta, theta + np.pi), basis)
                assert p1 == pytest.approx(p2, abs=1e-12)


class TestPaddleController:
    def test_default_stack_is_quarter_half_quarter(self):
        c = PaddleController()
        assert np.allclose(c.retardances, [np.pi / 2, np.pi, np.pi / 2])
        assert len(c) == 3

    def test_angles_stored_modulo_pi(self):
        c = PaddleController(angles=[3.5, -0.2, 7.0])
        assert np.all(c.angles >= 0)
        assert np.all(c.angles < np.pi)
        c.set_angle(0, -np.pi / 2)
        assert c.angles[0] == pytest.approx(np.pi / 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            PaddleController(retardances=[np.pi, np.pi], angles=[0.0])

    def test_all_zero_default_collapses_to_identity(self):
        # diag(1,i) diag(1,-1) diag(1,i) = diag(1, 1) exactly
        u = paddle_unitary(PaddleController())
        phase = u[0, 0]
        assert np.allclose(u, phase * np.eye(2), atol=1e-12)

    def test_singleton_equals_retarder(self):
        c = PaddleController(retardances=[np.pi], angles=[np.pi / 4])
        assert np.allclose(paddle_unitary(c), retarder_unitary(np.pi, np.pi / 4))

    def test_product_order_last_paddle_applied_last(self):
        rng = np.random.default_rng(11)
        rets = rng.uniform(0, 2 * np.pi, 3)
        angs = rng.uniform(0, np.pi, 3)
        c = PaddleController(retardances=rets, angles=angs)
        u_oracle = (
            oracle_retarder(rets[2], angs[2])
            @ oracle_retarder(rets[1], angs[1])
            @ oracle_retarder(rets[0], angs[0])
        )
        assert np.allclose(paddle_unitary(c), u_oracle, atol=1e-12)

    def test_unitarity_closure_random_controllers(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n = rng.integers(1, 5)
            c = PaddleController(
                retardances=rng.uniform(0, 2 * np.pi, n),
                angles=rng.uniform(0, np.pi, n),
            )
            assert is_unitary(paddle_unitary(c), tol=1e-10)


class TestTwoQubitStates:
    def test_phi_plus_entries(self):
        rho = phi_plus()
        expect = np.zeros((4, 4), dtype=complex)
        expect[0, 0] = expect[3, 3] = expect[0, 3] = expect[3, 0] = 0.5
        assert np.allclose(rho, expect, atol=1e-12)

    def test_phi_plus_is_pure(self):
        rho = phi_plus()
        assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-12)

    def test_phi_plus_hv_correlations(self):
        assert outcome_probs(phi_plus(), HV, HV) == pytest.approx(
            [0.5, 0.0, 0.0, 0.5], abs=1e-12
        )

    def test_phi_plus_da_correlations(self):
        # |phi+> is correlated in the diagonal basis too (projector oracle)
        oracle = oracle_probs(phi_plus(), (D, A), (D, A))
        assert oracle == pytest.approx([0.5, 0.0, 0.0, 0.5], abs=1e-12)
        assert outcome_probs(phi_plus(), DA, DA) == pytest.approx(oracle, abs=1e-12)

    def test_mutually_unbiased_bases(self):
        probs = outcome_probs(phi_plus(), HV, DA)
        assert probs == pytest.approx([0.25] * 4, abs=1e-12)

    def test_werner_limits(self):
        assert np.allclose(werner_state(1.0), phi_plus(), atol=1e-12)
        assert np.allclose(werner_state(0.0), np.eye(4) / 4, atol=1e-12)

    def test_werner_out_of_range(self):
        with pytest.raises(ValueError):
            werner_state(1.01)
        with pytest.raises(ValueError):
            werner_state(-0.01)

    def test_werner_09_outcome_probs(self):
        # analytic: p/2 + (1-p)/4 on correlated ports, (1-p)/4 on crossed
        rho = werner_state(0.9)
        expect = np.array([0.475, 0.025, 0.025, 0.475])
        assert outcome_probs(rho, HV, HV) == pytest.approx(expect, abs=1e-12)
        assert oracle_probs(rho, (H, V), (H, V)) == pytest.approx(expect, abs=1e-12)

    def test_apply_local_identity(self):
        rho = werner_state(0.7)
        assert np.array_equal(apply_local(np.eye(2), np.eye(2), rho), rho)

    def test_apply_local_half_wave_flips_arm_a(self):
        hwp = retarder_unitary(np.pi, np.pi / 4)
        rho = apply_local(hwp, np.eye(2), phi_plus())
        assert outcome_probs(rho, HV, HV) == pytest.approx(
            [0.0, 0.5, 0.5, 0.0], abs=1e-12
        )

    def test_apply_local_preserves_state_invariants(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            rho = werner_state(rng.uniform())
            out = apply_local(haar_unitary(rng), haar_unitary(rng), rho)
            assert is_density_matrix(out, tol=1e-10)

    def test_probability_normalization_random_states(self):
        rng = np.random.default_rng(23)
        for _ in range(1000):
            rho = apply_local(
                haar_unitary(rng), haar_unitary(rng), werner_state(rng.uniform())
            )
            for ba in (HV, DA):
                for bb in (HV, DA):
                    p = outcome_probs(rho, ba, bb)
                    assert p.min() >= -1e-12
                    assert p.sum() == pytest.approx(1.0, abs=1e-10)

    def test_real_rotation_pairs_keep_hv_correlations(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            u = rotation(rng.uniform(0, 2 * np.pi))
            rho = apply_local(u, u.conj(), phi_plus())
            p = outcome_probs(rho, HV, HV)
            assert abs(p[1]) < 1e-10
            assert abs(p[2]) < 1e-10


class TestSingleArm:
    def test_identity_fibre_extinction(self):
        assert single_arm_probs(H, np.eye(2), HV) == pytest.approx([1, 0], abs=1e-12)
        assert single_arm_probs(D, np.eye(2), DA) == pytest.approx([1, 0], abs=1e-12)

    def test_half_wave_at_22p5_splits(self):
        u = retarder_unitary(np.pi, np.pi / 8)
        assert single_arm_probs(H, u, HV) == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_probs_normalized(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            u = haar_unitary(rng)
            state = haar_unitary(rng) @ H
            for basis in (HV, DA):
                p = single_arm_probs(state, u, basis)
                assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_basis_projectors():
    assert abs(np.vdot(*HV.states)) < 1e-12
    assert abs(np.vdot(*DA.states)) < 1e-12
    assert np.allclose(DA.states[0], (H + V) / np.sqrt(2))
    assert np.allclose(DA.states[1], (H - V) / np.sqrt(2))
    assert set(BASES) == {"HV", "DA"}
