from functools import reduce
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stabmon.core import (
    PAULI,
    InvalidStateError,
    PauliString,
    QubitRegister,
    apply_local,
    apply_local_dm,
    basis_ket,
    build_pauli,
    eigenspace_projectors,
    expectation,
    ket_to_dm,
    matrix_exp,
    partial_trace,
    pauli_op,
    trace_distance,
    validate_state,
)

I2, X, Y, Z = (PAULI[p] for p in "IXYZ")


def naive_kron(factors):
    """Hand-rolled Kronecker product, independent of numpy.kron."""
    out = np.array([[1.0 + 0j]])
    for f in factors:
        r, c = out.shape
        fr, fc = f.shape
        new = np.zeros((r * fr, c * fc), dtype=complex)
        for i in range(r):
            for j in range(c):
                for a in range(fr):
                    for b in range(fc):
                        new[i * fr + a, j * fc + b] = out[i, j] * f[a, b]
        out = new
    return out


def random_dm(rng, d, rank=None):
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


class TestRegister:
    def test_labels_and_dim(self):
        reg = QubitRegister([1, 2, 3, 4, "m_z", "m_x"])
        assert reg.dim == 64
        assert reg.index("m_z") == 4
        assert reg.index(1) == 0

    def test_duplicate_labels(self):
        with pytest.raises(ValueError):
            QubitRegister(["a", "a"])


class TestBuildPauli:
    def test_single_z(self):
        reg = QubitRegister([1])
        np.testing.assert_array_equal(build_pauli([PauliString({1: "Z"})], reg), np.diag([1, -1]))

    def test_odd_parity_projector(self):
        reg = QubitRegister([1, 2])
        k = 0.7
        op = build_pauli([PauliString({}, k / 2), PauliString({1: "Z", 2: "Z"}, -k / 2)], reg)
        np.testing.assert_allclose(op, k * np.diag([0, 1, 1, 0]), atol=1e-15)

    def test_threelocal_sum_against_naive_kron(self):
        reg = QubitRegister([1, 2, 3, 4, "m_z"])
        k = 1.3
        op = build_pauli(
            [PauliString({1: "Z", 2: "Z", "m_z": "X"}, k / 2), PauliString({3: "Z", 4: "Z", "m_z": "X"}, -k / 2)],
            reg,
        )
        expected = k / 2 * (naive_kron([Z, Z, I2, I2, X]) - naive_kron([I2, I2, Z, Z, X]))
        np.testing.assert_allclose(op, expected, atol=1e-14)

    def test_unknown_label(self):
        with pytest.raises(KeyError):
            build_pauli([PauliString({"q": "X"})], QubitRegister([1]))

    def test_dimension_overflow(self):
        reg = QubitRegister(range(11))
        with pytest.raises(ValueError):
            build_pauli([PauliString({0: "Z"})], reg)

    def test_hermitian_for_real_coefficients(self):
        reg = QubitRegister([1, 2, 3])
        op = build_pauli([PauliString({1: "Y", 2: "X"}, 0.3), PauliString({3: "Y"}, -2.0)], reg)
        np.testing.assert_allclose(op, op.conj().T)


class TestProjectors:
    def test_zz(self):
        reg = QubitRegister([1, 2])
        projs = eigenspace_projectors(pauli_op(reg, {1: "Z", 2: "Z"}))
        assert [v for v, _ in projs] == pytest.approx([-1, 1])
        assert [round(np.trace(p).real) for _, p in projs] == [2, 2]
        np.testing.assert_allclose(projs[0][1] + projs[1][1], np.eye(4), atol=1e-12)

    def test_identity(self):
        projs = eigenspace_projectors(np.eye(8))
        assert len(projs) == 1
        assert projs[0][0] == pytest.approx(1.0)
        np.testing.assert_allclose(projs[0][1], np.eye(8), atol=1e-12)

    def test_eight_qubit_penalty_ground_space(self):
        reg = QubitRegister([1, 2, 3, 4, "a", "b", "c", "d"])
        K = 1.0
        h0 = build_pauli(
            [
                PauliString({}, K),
                PauliString({"a": "Z", "b": "Z"}, -K / 2),
                PauliString({"c": "Z", "d": "Z"}, -K / 2),
            ],
            reg,
        )
        projs = eigenspace_projectors(h0)
        ground_val, ground = projs[0]
        assert ground_val == pytest.approx(0.0, abs=1e-12)
        assert round(np.trace(ground).real) == 64
        assert projs[1][0] - ground_val == pytest.approx(K)
        # independent count: basis states with even parity on (a,b) and on (c,d)
        count = 0
        for idx in range(256):
            bits = [(idx >> (7 - i)) & 1 for i in range(8)]
            count += bits[4] == bits[5] and bits[6] == bits[7]
        assert count == 64

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            eigenspace_projectors(np.array([[0, 1], [0, 0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_resolution_of_identity(self, seed, n_distinct):
        rng = np.random.default_rng(seed)
        d = 8
        vals = rng.choice(np.arange(-3, 4), size=d) if n_distinct > 1 else np.zeros(d)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
        h = (q * vals) @ q.conj().T
        projs = [p for _, p in eigenspace_projectors(h)]
        np.testing.assert_allclose(sum(projs), np.eye(d), atol=1e-10)
        for i, p in enumerate(projs):
            np.testing.assert_allclose(p @ p, p, atol=1e-10)
            for j, pj in enumerate(projs):
                if i != j:
                    np.testing.assert_allclose(p @ pj, 0, atol=1e-10)


class TestExpectation:
    def test_z_on_zero(self):
        assert expectation(ket_to_dm(np.array([1, 0])), Z) == 1.0

    def test_zz_odd_bell(self):
        reg = QubitRegister([1, 2])
        psi = (basis_ket(reg, "01") + basis_ket(reg, "10")) / np.sqrt(2)
        assert expectation(ket_to_dm(psi), pauli_op(reg, {1: "Z", 2: "Z"})) == pytest.approx(-1)
        assert expectation(psi, pauli_op(reg, {1: "Z", 2: "Z"})) == pytest.approx(-1)

    def test_register_mismatch(self):
        with pytest.raises(ValueError):
            expectation(np.eye(4) / 4, Z)


class TestMatrixExp:
    def test_pauli_rotation(self):
        u = matrix_exp(-1j * np.pi / 2 * X)
        np.testing.assert_allclose(u @ np.array([1, 0]), [0, -1j], atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_exp(np.diag([0.3, -1.2])), np.diag(np.exp([0.3, -1.2])))

    def test_zero_is_exact_identity(self):
        np.testing.assert_array_equal(matrix_exp(np.zeros((4, 4))), np.eye(4))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            matrix_exp(np.array([[np.nan, 0], [0, 0]]))

    def test_antihermitian_against_taylor(self):
        rng = np.random.default_rng(5)
        g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        h = (g + g.conj().T) / 2
        a = -0.2j * h
        # 30-term Taylor sum with exact rational factorial control
        term = np.eye(8, dtype=complex)
        total = term.copy()
        for n in range(1, 31):
            term = term @ a * float(Fraction(1, n))
            total = total + term
        u = matrix_exp(a)
        np.testing.assert_allclose(u, total, atol=1e-12)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(8), atol=1e-10)


class TestTraceDistance:
    def test_zero(self):
        rho = random_dm(np.random.default_rng(0), 4)
        assert trace_distance(rho, rho) == pytest.approx(0, abs=1e-14)

    def test_orthogonal(self):
        assert trace_distance(np.diag([1.0, 0]), np.diag([0, 1.0])) == pytest.approx(1)

    def test_zero_vs_plus(self):
        plus = np.full((2, 2), 0.5)
        # closed form: eigenvalues of [[1/2,-1/2],[-1/2,-1/2]] are +-1/sqrt(2)
        assert trace_distance(np.diag([1.0, 0]), plus) == pytest.approx(1 / np.sqrt(2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_metric(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_dm(rng, 4, rank=int(rng.integers(1, 5))) for _ in range(3))
        assert abs(trace_distance(a, b) - trace_distance(b, a)) < 1e-10
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-10
        assert 0 <= trace_distance(a, b) <= 1 + 1e-10

    def test_batched(self):
        rng = np.random.default_rng(1)
        a = np.stack([random_dm(rng, 4) for _ in range(3)])
        d = trace_distance(a, a[0])
        assert d.shape == (3,)
        assert d[0] == pytest.approx(0, abs=1e-12)


class TestValidateState:
    def test_maximally_mixed(self):
        diag = validate_state(np.eye(4) / 4)
        assert diag.trace_deviation == pytest.approx(0, abs=1e-15)
        assert diag.hermiticity_deviation == 0
        assert diag.min_eigenvalue == pytest.approx(0.25)

    def test_bell(self):
        psi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        validate_state(ket_to_dm(psi))

    def test_bad_trace(self):
        with pytest.raises(InvalidStateError):
            validate_state(np.eye(2) * 0.55)


class TestHelpers:
    def test_partial_trace_product(self):
        rng = np.random.default_rng(2)
        a, b = random_dm(rng, 2), random_dm(rng, 4)
        reg = QubitRegister(["x", "y", "z"])
        rho = np.kron(a, b)
        np.testing.assert_allclose(partial_trace(rho, reg, ["x"]), a, atol=1e-14)
        np.testing.assert_allclose(partial_trace(rho, reg, ["y", "z"]), b, atol=1e-14)
        np.testing.assert_allclose(partial_trace(np.stack([rho, rho]), reg, ["x"])[1], a, atol=1e-14)

    def test_apply_local_matches_kron(self):
        rng = np.random.default_rng(3)
        n = 3
        u = matrix_exp(-0.3j * (X + 0.5 * Y))
        psi = rng.normal(size=(2, 1, 8)) + 1j * rng.normal(size=(2, 1, 8))
        for q in range(n):
            full = reduce(np.kron, [u if i == q else I2 for i in range(n)])
            np.testing.assert_allclose(apply_local(psi, n, q, u)[:, 0], psi[:, 0] @ full.T, atol=1e-14)
            rho = np.stack([random_dm(rng, 8) for _ in range(2)])
            np.testing.assert_allclose(apply_local_dm(rho, n, q, u), full @ rho @ full.conj().T, atol=1e-14)
