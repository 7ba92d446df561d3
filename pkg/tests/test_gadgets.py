import itertools

import numpy as np
import pytest

from stabmon.core import basis_ket, pauli_op
from stabmon.gadgets import (
    ConvergenceError,
    GadgetSpec,
    bs_gadget_target,
    build_bs_gadget,
    build_zz_gadget,
    convergence_check,
    effective_hamiltonian,
    enumerate_index_sets,
    gauged_residual,
    low_energy_hamiltonian,
    residual_slope,
    residual_table,
    verify_gadget,
    zz_gadget_target,
)

K = 1.0


def brute_force_index_sets(m):
    n = m - 1
    out = []
    for ls in itertools.product(range(m + 1), repeat=n):
        if sum(ls) == n and all(sum(ls[:x]) >= x for x in range(1, n + 1)):
            out.append(ls)
    return sorted(out)


@pytest.fixture(scope="module")
def bs():
    return build_bs_gadget(K, 0.1)


class TestIndexSets:
    def test_small(self):
        assert enumerate_index_sets(1) == [()]
        assert enumerate_index_sets(2) == [(1,)]
        assert sorted(enumerate_index_sets(3)) == [(1, 1), (2, 0)]

    @pytest.mark.parametrize("m", range(1, 7))
    def test_brute_force(self, m):
        got = enumerate_index_sets(m)
        assert len(got) == len(set(got))
        assert sorted(got) == brute_force_index_sets(m)

    def test_catalan_counts(self):
        # the constrained sets are counted by Catalan numbers
        assert [len(enumerate_index_sets(m)) for m in range(1, 8)] == [1, 1, 2, 5, 14, 42, 132]

    def test_invalid(self):
        with pytest.raises(ValueError):
            enumerate_index_sets(0)


class TestSpec:
    def test_zz_spectral_data(self):
        s = build_zz_gadget(K, 0.1)
        assert s.gap == pytest.approx(K)
        assert s.ground_dim == 8
        np.testing.assert_allclose(s.S(1) @ s.H0, -(np.eye(16) - s.P0), atol=1e-12)
        np.testing.assert_allclose(s.S(0), -s.P0)
        np.testing.assert_allclose(s.S(2) @ s.P0, 0, atol=1e-14)

    def test_bs_spectral_data(self, bs):
        assert bs.ground_dim == 64
        np.testing.assert_allclose(bs.levels, [0, K, 2 * K], atol=1e-12)
        assert bs.gap == pytest.approx(K)

    def test_bs_ground_space(self, bs):
        reg = bs.register
        for sys_bits in ("0000", "1011"):
            for mon in ("0000", "0011", "1100", "1111"):
                psi = basis_ket(reg, sys_bits + mon)
                assert psi.conj() @ bs.P0 @ psi == pytest.approx(1)
            psi = basis_ket(reg, sys_bits + "0100")
            assert abs(psi.conj() @ bs.P0 @ psi) < 1e-14

    def test_bs_perturbation_entries(self, bs):
        reg = bs.register
        c = K / (2 * np.sqrt(2))
        z = lambda q, m: pauli_op(reg, {q: "Z", m: "X"})
        x = lambda q, m: pauli_op(reg, {q: "X", m: "X"})
        hand = c * (z("3", "a") + z("4", "a") - z("1", "a") - z("2", "a"))
        hand += c * (z("3", "b") + z("4", "b") + z("1", "b") + z("2", "b"))
        hand += c * (x("2", "c") + x("4", "c") - x("1", "c") - x("3", "c"))
        hand += c * (x("2", "d") + x("4", "d") + x("1", "d") + x("3", "d"))
        hand += K * 0.1 / 2 * (
            pauli_op(reg, {"1": "Z", "2": "Z"})
            + pauli_op(reg, {"3": "Z", "4": "Z"})
            + pauli_op(reg, {"1": "X", "3": "X"})
            + pauli_op(reg, {"2": "X", "4": "X"})
        )
        np.testing.assert_allclose(bs.V, hand, atol=1e-14)

    def test_shifted_base_rejected(self):
        s = build_zz_gadget(K, 0.1)
        with pytest.raises(ValueError):
            GadgetSpec(s.register, s.H0 + np.eye(16), s.V, 0.1)

    def test_effective_qubit_flip(self, bs):
        reg = bs.register
        xab = pauli_op(reg, {"a": "X", "b": "X"})
        lo = basis_ket(reg, "0110" + "0000")
        hi = basis_ket(reg, "0110" + "1100")
        np.testing.assert_allclose(xab @ lo, hi)
        np.testing.assert_allclose(bs.P0 @ xab @ bs.P0 @ lo, hi)


class TestConvergence:
    def test_zero_eps(self):
        assert convergence_check(build_zz_gadget(K, 1e-300).with_eps(0.0)).ratio == 0.0

    def test_zz_dense_norm(self):
        s = build_zz_gadget(K, 0.1)
        ratio = 4 * np.linalg.norm(0.1 * s.V, 2) / s.gap
        assert convergence_check(s).ratio == pytest.approx(ratio)
        assert convergence_check(s).ok

    def test_large_eps_refused(self):
        s = build_zz_gadget(K, 2.0)
        assert not convergence_check(s).ok
        with pytest.raises(ConvergenceError):
            effective_hamiltonian(s, 2)
        effective_hamiltonian(s, 2, override=True)


class TestEffectiveHamiltonian:
    @pytest.mark.parametrize("order", [1, 2, 3])
    @pytest.mark.parametrize("build", [build_zz_gadget, build_bs_gadget])
    def test_hermitian_and_ground_supported(self, build, order):
        s = build(K, 0.05)
        h = effective_hamiltonian(s, order)
        np.testing.assert_allclose(h, h.conj().T, atol=1e-12)
        np.testing.assert_allclose(s.P0 @ h @ s.P0, h, atol=1e-10)

    def test_zz_first_order_is_projection(self):
        s = build_zz_gadget(K, 0.1)
        expected = 0.1 * s.P0 @ s.V @ s.P0
        np.testing.assert_allclose(effective_hamiltonian(s, 1), expected, atol=1e-14)
        xx = pauli_op(s.register, {"m1": "X", "m2": "X"})
        np.testing.assert_allclose(expected, 0.1 * s.P0 @ (2 * 0.1 * K * xx) @ s.P0, atol=1e-14)

    def test_zz_second_order_closed_form(self):
        for eps in (0.05, 0.1):
            s = build_zz_gadget(K, eps)
            np.testing.assert_allclose(effective_hamiltonian(s, 2), zz_gadget_target(K, eps), atol=1e-10)

    def test_zz_after_shift(self):
        s = build_zz_gadget(K, 0.1)
        reg = s.register
        eye = np.eye(16)
        target = 2 * K * 0.01 * (eye - pauli_op(reg, {"1": "Z", "2": "Z"})) @ pauli_op(reg, {"m1": "X", "m2": "X"})
        assert gauged_residual(effective_hamiltonian(s, 2), s.P0 @ target @ s.P0, s.P0, 1.0) < 1e-10

    def test_bs_second_order_closed_form(self, bs):
        np.testing.assert_allclose(effective_hamiltonian(bs, 2), bs_gadget_target(K, 0.1), atol=1e-10)

    def test_invalid_order(self, bs):
        with pytest.raises(ValueError):
            effective_hamiltonian(bs, 4)


class TestVerification:
    def test_series_matches_closed_form(self):
        rep = verify_gadget(build_zz_gadget(K, 0.1), lambda e: zz_gadget_target(K, e), 2)
        assert rep.residual < 1e-10 and rep.residual_half < 1e-10

    def test_target_itself(self, bs):
        h = effective_hamiltonian(bs, 2)
        assert gauged_residual(h, h, bs.P0, 1.0) == 0.0

    def test_shift_is_gauged(self, bs):
        h = effective_hamiltonian(bs, 2)
        assert gauged_residual(h, h + 0.37 * bs.P0, bs.P0, 1.0) < 1e-10

    def test_bs_exact_halving(self, bs):
        rep = verify_gadget(bs, lambda e: bs_gadget_target(K, e), 2, method="exact")
        assert 0.35 <= rep.halving_ratio <= 0.65

    @pytest.mark.parametrize("build", [build_zz_gadget, build_bs_gadget])
    def test_cubic_scaling(self, build):
        slope = residual_slope(build(K, 0.1), [0.2, 0.1, 0.05])
        assert slope == pytest.approx(3.0, abs=0.3)

    def test_exact_hamiltonian_spectrum(self):
        s = build_zz_gadget(K, 0.05)
        h = low_energy_hamiltonian(s)
        full = np.linalg.eigvalsh(s.hamiltonian)
        got = np.sort(np.linalg.eigvalsh(h))
        # eight low levels plus zeros from the complement
        np.testing.assert_allclose(np.sort(np.concatenate([full[:8], np.zeros(8)])), got, atol=1e-12)

    def test_table_rows(self):
        rows = residual_table(build_zz_gadget(K, 0.1), eps_values=(0.1,), orders=(1, 2))
        assert [r[:2] for r in rows] == [(0.1, 1), (0.1, 2)]
        assert rows[1][2] < rows[0][2]
