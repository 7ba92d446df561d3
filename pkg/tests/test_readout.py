import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stabmon.bacon_shor import CodeDefinition, default_register, threelocal_hamiltonian
from stabmon.core import QubitRegister, ket_to_dm, pauli_op
from stabmon.readout import (
    ERROR,
    NO_ERROR,
    UNDECIDED,
    BatchEstimator,
    DecisionConsumer,
    Estimator,
    EstimatorConsumer,
    EstimatorPolicy,
    IbarPolicy,
    WindowAverage,
    WindowConsumer,
    bayes_ratio_check,
    block_weights,
    decide,
    estimator_step,
    sector_names,
    sector_projectors,
    window_update,
)
from stabmon.sde import MeasurementChannel, TrajectoryConfig, kraus_step, propagate
from stabmon.zzdemo import zz_hamiltonian, zz_initial_ket, zz_operator, zz_register

LAM = 0.6
REG = zz_register()
ZZ = zz_operator()
ZM = pauli_op(REG, {"m": "Z"})
H = zz_hamiltonian()
CH = MeasurementChannel(REG, "m", LAM)
PI_P = (np.eye(8) + ZZ) / 2
PI_M = np.eye(8) - PI_P

BS_REG = default_register()
BS = CodeDefinition.on(BS_REG)
BS_H = threelocal_hamiltonian(1.0)
BS_CH = (MeasurementChannel(BS_REG, "m_z", LAM), MeasurementChannel(BS_REG, "m_x", LAM))


def zz_config(amps, t_final, dt=1e-3, **kw):
    return TrajectoryConfig(REG, H, (CH,), zz_initial_ket(amps), dt, t_final, **kw)


def noise_record(rng, n, dt, shape=()):
    return rng.normal(0, np.sqrt(dt), size=(n,) + shape) / (2 * np.sqrt(LAM))


class TestSectors:
    def test_names(self):
        assert sector_names(2) == ["pp", "pm", "mp", "mm"]
        assert sector_names(1) == ["p", "m"]

    def test_projectors_resolve_identity(self):
        projs = sector_projectors([BS.S_x, BS.S_z])
        np.testing.assert_allclose(sum(projs.values()), np.eye(64), atol=1e-14)
        for p in projs.values():
            np.testing.assert_allclose(p @ p, p, atol=1e-14)

    def test_maximally_mixed_quarter(self):
        reg = QubitRegister(["1", "2", "3", "4"])
        code = CodeDefinition.on(reg)
        w = block_weights(np.eye(16) / 16, [code.S_x, code.S_z])
        for name in sector_names(2):
            assert w[name] == pytest.approx(0.25)
        assert w.marginal(1, -1) == pytest.approx(0.5)

    def test_non_commuting_rejected(self):
        x1 = pauli_op(REG, {"1": "X"})
        with pytest.raises(ValueError):
            block_weights(np.eye(8) / 8, [ZZ, x1])
        with pytest.raises(ValueError):
            block_weights(np.eye(8) / 8, [x1], hamiltonian=H)


class TestEstimator:
    def test_initial_weights(self):
        est = Estimator(REG, H, [CH], 1e-3, [ZZ])
        w = est.weights()
        assert w["p"] == pytest.approx(0.5) and w["m"] == pytest.approx(0.5)
        expected = np.kron(np.eye(4) / 4, np.diag([1.0, 0.0]))
        np.testing.assert_allclose(est.state, expected, atol=1e-14)
        assert block_weights(est, [ZZ])["p"] == pytest.approx(0.5)

    def test_matches_repeated_kraus_steps(self):
        dt = 1e-3
        rng = np.random.default_rng(0)
        est = Estimator(REG, H, [CH], dt)
        rho = np.kron(np.eye(4) / 4, np.diag([1.0, 0.0]))
        for dI in noise_record(rng, 500, dt):
            rho = kraus_step(rho, H, [CH], [dI], dt)
            estimator_step(est, [dI], dt)
        np.testing.assert_allclose(est.state, rho, atol=1e-10)

    def test_sector_and_dense_agree(self):
        dt = 1e-3
        rng = np.random.default_rng(1)
        dense = BatchEstimator(BS_REG, BS_H, BS_CH, [BS.S_x, BS.S_z], dt, mode="dense")
        sector = BatchEstimator(BS_REG, BS_H, BS_CH, [BS.S_x, BS.S_z], dt, mode="sector")
        dense.reset(3)
        sector.reset(3)
        for dI in noise_record(rng, 300, dt, (3, 2)) + 0.5 * dt:
            dense.step(dI)
            sector.step(dI)
        np.testing.assert_allclose(sector.weights(), dense.weights(), atol=1e-10)
        np.testing.assert_allclose(sector.density(), dense.density(), atol=1e-10)

    def test_sector_mode_rejects_coupling_hamiltonian(self):
        h = BS_H + pauli_op(BS_REG, {"1": "X"})
        with pytest.raises(ValueError):
            BatchEstimator(BS_REG, h, BS_CH, [BS.S_x, BS.S_z], 1e-3)

    def test_dt_must_match(self):
        est = Estimator(REG, H, [CH], 1e-3)
        with pytest.raises(ValueError):
            estimator_step(est, [0.0], 2e-3)

    def test_same_sector_copies_share_monitor(self):
        # two estimators in the -1 sector, driven by one record
        dt = 1e-3
        rng = np.random.default_rng(2)
        a = ket_to_dm(np.kron([0, 1.0, 0, 0], [1.0, 0]))
        b = ket_to_dm(np.kron([0, 0, 1.0, 0], [1.0, 0]))
        for dI in noise_record(rng, 2000, dt) + 0.3 * dt:
            a = kraus_step(a, H, [CH], [dI], dt)
            b = kraus_step(b, H, [CH], [dI], dt)
            assert abs(np.trace(ZM @ a).real - np.trace(ZM @ b).real) < 1e-8


class TestBayesOracle:
    def test_indistinguishable(self):
        p = bayes_ratio_check([0.3, 0.7], 0.01, 0.2, 0.2, LAM, 1e-3)
        np.testing.assert_allclose(p, [0.3, 0.7])

    def test_likelihood_max(self):
        p = np.array([0.5, 0.5])
        for _ in range(50):
            q = bayes_ratio_check(p, -0.4 * 1e-3, 0.9, -0.4, LAM, 1e-3)
            assert q[1] >= p[1]
            p = q

    def test_exact_for_z_eigenstate_monitors(self):
        # monitor |0> in the +1 sector and |1> in the -1 sector, H = 0
        dt = 1e-4
        rho = 0.3 * ket_to_dm(np.kron([1.0, 0, 0, 0], [1.0, 0])) + 0.7 * ket_to_dm(np.kron([0, 1.0, 0, 0], [0, 1.0]))
        rng = np.random.default_rng(3)
        p = np.array([0.3, 0.7])
        for dI in noise_record(rng, 100, dt):
            rho = kraus_step(rho, np.zeros((8, 8)), [CH], [dI], dt)
            p = bayes_ratio_check(p, dI, 1.0, -1.0, LAM, dt)
            assert np.trace(PI_P @ rho).real == pytest.approx(p[0], rel=1e-10)

    def test_one_step_against_estimator(self):
        dt = 1e-4
        rng = np.random.default_rng(4)
        est = BatchEstimator(REG, H, [CH], [ZZ], dt, mode="dense")
        est.reset(1)
        for dI in noise_record(rng, 5000, dt):
            est.step(np.array([[dI]]))
        rho = est.density()[0]
        zp = np.trace(PI_P @ ZM @ rho).real / np.trace(PI_P @ rho).real
        zm = np.trace(PI_M @ ZM @ rho).real / np.trace(PI_M @ rho).real
        assert abs(zp - zm) > 0.1
        p0 = est.weights()[0]
        for dI in noise_record(rng, 5, dt):
            nxt = copy.deepcopy(est)
            nxt.step(np.array([[dI]]))
            expected = bayes_ratio_check(p0, dI, zp, zm, LAM, dt)
            assert np.max(np.abs(nxt.weights()[0] - expected) / expected) < 1e-3

    def test_pure_noise_log_ratio_drift(self):
        # mean drift of ln(p+/p-) under a pure-noise record is -2 lam (z+^2 - z-^2) dt
        dt, n_steps, batch = 1e-3, 3000, 400
        rng = np.random.default_rng(5)
        est = BatchEstimator(REG, H, [CH], [ZZ], dt, mode="dense")
        est.reset(batch)
        predicted = np.zeros(batch)
        for _ in range(n_steps):
            rho = est.density()
            zp = np.einsum("ij,nji->n", PI_P @ ZM, rho).real / np.einsum("ij,nji->n", PI_P, rho).real
            zm = np.einsum("ij,nji->n", PI_M @ ZM, rho).real / np.einsum("ij,nji->n", PI_M, rho).real
            predicted += -2 * LAM * (zp**2 - zm**2) * dt
            est.step(noise_record(rng, batch, dt)[:, None])
        w = est.weights()
        actual = np.log(w[:, 0] / w[:, 1])
        diff = actual - predicted
        assert abs(diff.mean()) < 4 * diff.std(ddof=1) / np.sqrt(batch)
        # the drift is not trivially zero
        assert abs(predicted.mean()) > 4 * diff.std(ddof=1) / np.sqrt(batch)


class TestDragging:
    @pytest.mark.parametrize("amps,sign", [([1, 0, 0, 1], 1), ([0, 1, 1, 0], -1)])
    def test_estimator_reaches_sector(self, amps, sign):
        est = EstimatorConsumer(REG, H, [CH], {"ZZ": ZZ})
        res = propagate(zz_config(amps, 40.0, log_stride=1000), 6, range(100), [est])
        final = res.readouts["ZZ_est"][:, -1]
        assert sign * final.mean() > 0.9

    def test_true_sector_weight_is_submartingale(self):
        est = EstimatorConsumer(REG, H, [CH], {"ZZ": ZZ})
        res = propagate(zz_config([0, 1, 0, 0], 20.0, log_stride=500), 8, range(200), [est])
        p = res.readouts["p_m"]
        inc = np.diff(p, axis=1)
        err = inc.std(axis=0, ddof=1) / np.sqrt(p.shape[0])
        assert np.all(inc.mean(axis=0) > -4 * err)
        assert p[:, -1].mean() > p[:, 0].mean()


class TestWindow:
    def test_constant_record(self):
        acc = WindowAverage(0.5, 1e-2)
        for n in range(200):
            assert window_update(acc, 1e-2, 1e-2, (n + 1) * 1e-2) == pytest.approx(1.0)

    def test_matches_direct_sums(self):
        dt, w = 1e-2, 0.3
        rng = np.random.default_rng(6)
        dI = rng.normal(size=100) * 0.1
        acc = WindowAverage(w, dt)
        m = int(round(w / dt))
        for n in range(100):
            got = acc.update(dI[n], (n + 1) * dt)
            lo = max(0, n + 1 - m)
            assert got == pytest.approx(dI[lo : n + 1].sum() / ((n + 1 - lo) * dt), rel=1e-12)

    def test_time_must_be_monotone(self):
        acc = WindowAverage(1.0, 0.1)
        acc.update(0.1, 0.5)
        with pytest.raises(ValueError):
            acc.update(0.1, 0.4)

    def test_consumer_matches_scalar(self):
        dt, stride, w = 1e-2, 5, 1.0
        rng = np.random.default_rng(7)
        dI = rng.normal(size=(307, 2, 1)) * 0.05
        cons = WindowConsumer(["a"], w)
        cons.start(2, 307, dt, stride)
        scalar = [WindowAverage(w, dt) for _ in range(2)]
        for n in range(307):
            cons.update(n, dI[n])
            vals = [s.update(dI[n, b, 0], (n + 1) * dt) for b, s in enumerate(scalar)]
            if (n + 1) % stride == 0 or n == 306:
                np.testing.assert_allclose(cons.log()["Ibar_a"], vals, rtol=1e-12)

    def test_pure_noise_statistics(self):
        dt, w, n = 1e-3, 40.0, 500
        rng = np.random.default_rng(8)
        ibar = noise_record(rng, n, w).ravel() / w  # window sum of Gaussian increments
        assert abs(ibar.mean()) < 4 * np.sqrt(1 / (4 * LAM * w) / n)
        assert ibar.var(ddof=1) == pytest.approx(1 / (4 * LAM * w), rel=4 * np.sqrt(2 / (n - 1)))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=60), st.integers(1, 10))
    def test_window_never_exceeds_width(self, xs, width):
        acc = WindowAverage(width * 0.1, 0.1)
        for i, x in enumerate(xs):
            acc.update(x * 0.1, (i + 1) * 0.1)
            assert len(acc._ring) <= width


class TestDecisions:
    def test_zero_record_undecided_until_half_window(self):
        t = np.arange(0, 41, 1.0)
        out = decide(t, np.zeros_like(t), IbarPolicy(hold=20.0))
        assert np.all(out[t < 20] == UNDECIDED)
        assert np.all(out[t >= 20] == ERROR)

    def test_static_monitor(self):
        t = np.arange(0, 41, 1.0)
        assert decide(t, np.ones_like(t), IbarPolicy())[-1] == NO_ERROR
        # a flipped but static monitor is still 'no error'
        assert decide(t, -np.ones_like(t), IbarPolicy())[-1] == NO_ERROR

    def test_interrupted_run_resets_hold(self):
        t = np.arange(0, 60, 1.0)
        v = np.where((t > 10) & (t < 12), 0.9, 0.1)
        out = decide(t, v, IbarPolicy(hold=20.0))
        assert out[30] == UNDECIDED and out[33] == ERROR

    def test_nan_is_undecided(self):
        out = decide([0.0, 1.0], [np.nan, np.nan], IbarPolicy(hold=0.5))
        assert np.all(out == UNDECIDED)

    def test_estimator_policy(self):
        vals = np.array([[0.25, 0.25, 0.25, 0.25], [0.96, 0.02, 0.01, 0.01], [0.1, 0.9, 0.0, 0.0]])
        np.testing.assert_array_equal(decide(np.arange(3), vals, EstimatorPolicy()), [-1, 0, -1])

    def test_bad_policy(self):
        with pytest.raises(TypeError):
            decide([0.0], [0.0], object())

    def test_consumer_flags_minus_sector(self):
        win = WindowConsumer(["m"], 40.0)
        dec = DecisionConsumer(win, IbarPolicy())
        res = propagate(zz_config([0, 1, 0, 0], 80.0, log_stride=100), 9, range(30), [win, dec])
        assert np.all(np.isfinite(res.summaries["first_error_m"]))
        assert res.readouts["decision_m"][:, -1].tolist() == [ERROR] * 30
        assert abs(res.readouts["Ibar_m"][:, -1].mean()) < 0.15

    def test_consumer_clean_plus_sector(self):
        win = WindowConsumer(["m"], 40.0)
        dec = DecisionConsumer(win, IbarPolicy())
        res = propagate(zz_config([1, 0, 0, 1], 80.0, log_stride=100), 10, range(30), [win, dec])
        first_ok = res.summaries["first_ok_m"]
        assert np.all(first_ok < 80.0)
        assert np.all(np.isnan(res.summaries["first_error_m"]))


@pytest.mark.slow
def test_intermediate_rate_decides_fastest():
    # median time for the estimator to flag the -1 sector, at three rates
    medians = {}
    for lam in (0.05, 0.6, 6.0):
        ch = MeasurementChannel(REG, "m", lam)
        cfg = TrajectoryConfig(REG, H, (ch,), zz_initial_ket([0, 1, 0, 0]), 1e-3, 60.0, log_stride=100)
        est = EstimatorConsumer(REG, H, [ch], {"ZZ": ZZ})
        res = propagate(cfg, 12, range(60), [est])
        medians[lam] = np.median(np.nan_to_num(res.summaries["est_flag_ZZ"], nan=np.inf))
    assert medians[0.6] < medians[0.05]
    assert medians[0.6] < medians[6.0]
