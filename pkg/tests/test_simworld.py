"""Plant integrator, contact model, injection process and sensor pipeline."""

import numpy as np
import pytest

from wrenchest import simworld
from wrenchest.dyncore import ModelError, kernels

Q0 = np.array([0.3, -0.7, 0.5, 0.2, 0.6, -0.1])


def flange_pos(model, q):
    T = kernels.frame_chain(model.dh, q)
    return T[6, :3, 3].copy()


def world(model, **kw):
    kw.setdefault("q", Q0.copy())
    kw.setdefault("dq", np.zeros(6))
    return simworld.WorldState(model=model, **kw)


# ---------------------------------------------------------------------------
# integrator

class TestIntegrator:
    def test_equilibrium_hold_is_exact(self, model):
        # at the setpoint with zero velocity nothing should move, bitwise
        ws = world(model)
        for _ in range(100):
            ws, w, tau = simworld.step_world_position(ws, Q0)
        assert np.all(ws.q == Q0)
        assert np.all(ws.dq == 0.0)
        assert np.all(w == 0.0)

    def test_free_fall_matches_forward_dynamics(self, model):
        ws = world(model, friction="none")
        tau = np.zeros(6)
        dd_ref = kernels.forward_dynamics(
            model.dh, model.mass, model.com, model.inertia, model.gravity,
            model.friction, Q0, np.zeros(6), tau, np.zeros(6), 0)
        h = 1e-5
        ws, _ = simworld.step_world(ws, tau, dt_ctrl=h)
        dd_num = ws.dq / h
        rel = np.abs(dd_num - dd_ref).max() / np.abs(dd_ref).max()
        assert rel < 1e-6

    def test_passive_energy_conservation(self, model):
        # no friction, no motor: RK4 should hold total energy over 10 s
        ws = world(model, friction="none")

        def energy(ws):
            M = kernels.mass_matrix(model.dh, model.mass, model.com,
                                    model.inertia, ws.q)
            T = 0.5 * ws.dq @ M @ ws.dq
            V = 0.0
            fr = kernels.frame_chain(model.dh, ws.q)
            for i in range(6):
                p = fr[i + 1, :3, :3] @ model.com[i] + fr[i + 1, :3, 3]
                V -= model.mass[i] * model.gravity @ p
            return T + V

        e0 = energy(ws)
        worst = 0.0
        for _ in range(1000):
            ws, _ = simworld.step_world(ws, np.zeros(6))
            worst = max(worst, abs(energy(ws) - e0))
        assert worst / abs(e0) < 1e-6

    def test_identical_seeds_identical_histories(self, model):
        def run():
            inj = simworld.draw_injection(seed=11, duration=3.0)
            tet = simworld.TetherSpring(anchor=flange_pos(model, Q0))
            ws = world(model, injection=inj, tether=tet, seed=11)
            trk = simworld.ServoTracker(model=model)
            qs, wr = [], []
            for _ in range(300):
                ws, w, tau = trk.step(ws, Q0)
                qs.append(ws.q.copy())
                wr.append(w)
            return np.array(qs), np.array(wr)

        qa, wa = run()
        qb, wb = run()
        assert np.array_equal(qa, qb)
        assert np.array_equal(wa, wb)

    def test_returned_wrench_matches_end_state(self, model):
        inj = simworld.draw_injection(seed=4, duration=2.0)
        ws = world(model, injection=inj)
        for _ in range(50):
            ws, w, tau = simworld.step_world_position(ws, Q0)
        assert np.array_equal(w, ws.external_wrench())

    def test_logged_torque_reproduces_step(self, model):
        # the torque a servo tick reports must be exactly what the plant got
        inj = simworld.draw_injection(seed=9, duration=2.0)
        ws = world(model, injection=inj)
        trk = simworld.ServoTracker(model=model)
        for _ in range(20):
            q_pre, dq_pre, t_pre = ws.q.copy(), ws.dq.copy(), ws.t
            ws, w, tau = trk.step(ws, Q0 + 0.05)
            replay = simworld.WorldState(model=model, q=q_pre, dq=dq_pre,
                                         t=t_pre, injection=inj)
            replay, w2 = simworld.step_world(replay, tau)
            assert np.array_equal(replay.q, ws.q)
            assert np.array_equal(replay.dq, ws.dq)
            assert np.array_equal(w2, w)


# ---------------------------------------------------------------------------
# contact

class TestContact:
    def test_static_normal_force(self, model):
        # 0.1 mm penetration on a 2e5 N/m plane reads 20 N, no velocity terms
        pos = flange_pos(model, Q0)
        plane = simworld.ContactPlane(point=pos + [0, 0, 1e-4],
                                      normal=[0.0, 0.0, 1.0],
                                      stiffness=2e5, damping=0.0, mu=0.3)
        ws = world(model, planes=[plane])
        w = ws.external_wrench()
        assert abs(w[2] - 20.0) < 1e-9
        assert np.abs(w[[0, 1, 3, 4, 5]]).max() < 1e-12

    def test_separated_plane_is_silent(self, model):
        pos = flange_pos(model, Q0)
        plane = simworld.ContactPlane(point=pos - [0, 0, 1e-3],
                                      normal=[0.0, 0.0, 1.0])
        ws = world(model, planes=[plane])
        assert np.all(ws.external_wrench() == 0.0)

    def test_sliding_friction_magnitude(self, model):
        # 10 mm/s lateral slide under a 20 N normal load, mu = 0.3: the
        # regularized Coulomb force sits within 1% of the ideal 6 N
        pos = flange_pos(model, Q0)
        plane = simworld.ContactPlane(point=pos + [0, 0, 1e-4],
                                      normal=[0.0, 0.0, 1.0],
                                      stiffness=2e5, damping=0.0, mu=0.3)
        J = kernels.jacobian(model.dh, Q0)
        dq = np.linalg.solve(J, np.array([0.01, 0, 0, 0, 0, 0]))
        ws = world(model, dq=dq, planes=[plane])
        w = ws.external_wrench()
        s, reg = 0.01, simworld.SLIP_REG
        ideal = -0.3 * 20.0 * s / np.sqrt(s * s + reg * reg)
        assert abs(w[0] - ideal) < 1e-9
        assert abs(abs(w[0]) - 6.0) / 6.0 < 0.01
        assert abs(w[1]) < 1e-12

    def test_deep_penetration_faults(self, model):
        pos = flange_pos(model, Q0)
        plane = simworld.ContactPlane(point=pos + [0, 0, 6e-3],
                                      normal=[0.0, 0.0, 1.0])
        ws = world(model, planes=[plane])
        with pytest.raises(simworld.ContactFault, match="penetration"):
            simworld.step_world(ws, np.zeros(6))

    def test_plane_validation(self):
        with pytest.raises(ModelError, match="unit"):
            simworld.ContactPlane(point=[0, 0, 0], normal=[0, 0, 2.0])
        with pytest.raises(ModelError, match="stiffness"):
            simworld.ContactPlane(point=[0, 0, 0], normal=[0, 0, 1.0],
                                  stiffness=0.0)
        with pytest.raises(ModelError, match="mu"):
            simworld.ContactPlane(point=[0, 0, 0], normal=[0, 0, 1.0],
                                  mu=3.0)

    def test_tether_pull(self, model):
        pos = flange_pos(model, Q0)
        tet = simworld.TetherSpring(anchor=pos + [0.01, 0, 0],
                                    stiffness=15.0, damping=8.0)
        ws = world(model, tether=tet)
        w = ws.external_wrench()
        assert abs(w[0] - 0.15) < 1e-12
        assert np.abs(w[1:]).max() < 1e-12
        with pytest.raises(ModelError, match="nonnegative"):
            simworld.TetherSpring(anchor=pos, stiffness=-1.0)


# ---------------------------------------------------------------------------
# servo

class TestServo:
    def test_tracker_settles_step(self, model):
        ws = world(model)
        trk = simworld.ServoTracker(model=model)
        qc = Q0 + 0.1
        hist = []
        for _ in range(1000):
            ws, w, tau = trk.step(ws, qc)
            hist.append(ws.q - qc)
        hist = np.array(hist)
        assert np.abs(hist[299]).max() < 1e-2     # settled by 3 s
        assert np.abs(hist[800:]).max() < 1e-2    # residual wrist hunt stays small

    def test_quintic_tracking(self, model):
        def quintic(t, T, d):
            s = min(max(t / T, 0.0), 1.0)
            pos = d * (10 * s**3 - 15 * s**4 + 6 * s**5)
            vel = d * (30 * s**2 - 60 * s**3 + 30 * s**4) / T
            return pos, vel

        ws = world(model)
        trk = simworld.ServoTracker(model=model)
        d = np.array([0.8, -0.6, 0.5, 0.9, -0.7, 1.0])
        worst = 0.0
        for k in range(300):
            qq, vv = quintic(k * 0.01, 2.0, d)
            ws, w, tau = trk.step(ws, Q0 + qq, vv)
            ref = Q0 + quintic((k + 1) * 0.01, 2.0, d)[0]
            worst = max(worst, np.abs(ws.q - ref).max())
        assert worst < 0.05
        assert np.abs(ws.q - (Q0 + d)).max() < 0.01


# ---------------------------------------------------------------------------
# injection process

class TestInjection:
    def test_reproducible(self):
        a = simworld.draw_injection(seed=5, duration=20.0)
        b = simworld.draw_injection(seed=5, duration=20.0)
        ts = np.linspace(0, 20, 333)
        assert np.array_equal(np.stack([a.eval(t) for t in ts]),
                              np.stack([b.eval(t) for t in ts]))
        c = simworld.draw_injection(seed=6, duration=20.0)
        assert not np.array_equal(a.amp, c.amp)

    def test_envelope_bounds_and_gaps(self):
        inj = simworld.draw_injection(seed=2, duration=30.0)
        ts = np.arange(0.0, 31.0, 0.003)
        env = np.array([inj.envelope(t) for t in ts])
        assert env.min() >= 0.0
        assert env.max() <= 1.0 + 1e-12
        # strictly zero before the first window opens
        t0 = inj.windows[0, 0]
        assert all(inj.envelope(t) == 0.0 for t in np.linspace(0, t0 - 1e-9, 7))
        assert np.all(inj.eval(t0 * 0.5) == 0.0)

    def test_windows_disjoint_sorted(self):
        for seed in range(8):
            win = simworld.draw_injection(seed=seed, duration=40.0).windows
            assert np.all(win[:, 1] > win[:, 0])
            assert np.all(win[1:, 0] >= win[:-1, 1])

    def test_peak_amplitude_split(self):
        # the sinusoid amplitudes per axis split a single drawn peak
        for seed in range(8):
            inj = simworld.draw_injection(seed=seed, duration=10.0)
            peaks = inj.amp.sum(axis=1)
            assert np.all(peaks[:3] >= 5.0) and np.all(peaks[:3] <= 30.0)
            assert np.all(peaks[3:] >= 0.2) and np.all(peaks[3:] <= 1.5)
            assert np.all(inj.amp >= 0.0)


# ---------------------------------------------------------------------------
# sensors

class TestSensors:
    def test_current_exact_and_linear(self, model):
        tau = np.array([10.0, -5.0, 3.0, 1.0, -0.5, 0.2])
        cur = simworld.synthesize_current(model, tau)
        assert np.array_equal(cur, tau / model.motor_k)
        assert np.array_equal(simworld.synthesize_current(model, 2 * tau),
                              2 * cur)

    def test_current_noise_statistics(self, model):
        cfg = simworld.SensorConfig()
        rng = np.random.default_rng(0)
        tau = np.zeros(6)
        draws = np.stack([simworld.synthesize_current(model, tau, cfg, rng)
                          for _ in range(4000)])
        assert np.abs(draws.mean(axis=0)).max() < 4 * cfg.current_noise / np.sqrt(4000)
        assert np.abs(draws.std(axis=0) - cfg.current_noise).max() < 0.1 * cfg.current_noise

    def test_measured_wrench_noise(self):
        cfg = simworld.SensorConfig()
        rng = np.random.default_rng(1)
        w = np.array([5.0, -2.0, 10.0, 0.3, -0.1, 0.2])
        draws = np.stack([simworld.measure_wrench(w, cfg, rng)
                          for _ in range(4000)]) - w
        assert np.abs(draws[:, :3].std(axis=0) - cfg.ft_force_noise).max() < 0.01
        assert np.abs(draws[:, 3:].std(axis=0) - cfg.ft_torque_noise).max() < 0.001

    def test_quantize(self):
        assert simworld.quantize(0.123456789, 1e-3) == pytest.approx(0.123, abs=1e-15)
        x = np.array([0.1, 0.2])
        assert np.array_equal(simworld.quantize(x, 0.0), x)

    def test_config_validation(self):
        with pytest.raises(ModelError, match="Nyquist"):
            simworld.SensorConfig(cutoff=60.0)
        with pytest.raises(ModelError, match="nonnegative"):
            simworld.SensorConfig(current_noise=-0.1)


# ---------------------------------------------------------------------------
# state pipeline

class TestStatePipeline:
    def test_constant_stream(self):
        cfg = simworld.SensorConfig()
        x = np.full((300, 2), 0.37)
        q, dq, ddq = simworld.derive_states(x, cfg)
        # steady-state init: flat from the very first sample
        assert np.abs(dq).max() < 1e-9
        assert np.abs(ddq).max() < 1e-9
        assert np.abs(q - simworld.quantize(0.37, cfg.position_quantum)).max() < 1e-12

    def test_online_equals_batch(self):
        cfg = simworld.SensorConfig()
        rng = np.random.default_rng(3)
        x = np.cumsum(rng.normal(size=(400, 6)) * 1e-3, axis=0) + 0.2
        qb, dqb, ddqb = simworld.derive_states(x, cfg)
        f = simworld.StateFilter(cfg)
        rows = [f.push(xi) for xi in x]
        qo = np.stack([r[0] for r in rows])
        dqo = np.stack([r[1] for r in rows])
        ddqo = np.stack([r[2] for r in rows])
        assert np.array_equal(qo, qb)
        assert np.array_equal(dqo, dqb)
        assert np.array_equal(ddqo, ddqb)

    def test_minimum_length_guard(self):
        cfg = simworld.SensorConfig()
        with pytest.raises(ModelError, match="50"):
            simworld.derive_states(np.zeros((49, 6)), cfg)

    def test_sine_gain_and_phase(self):
        # measured steady-state response must match the analytic channel
        # response; quantization off so the comparison is clean
        cfg = simworld.SensorConfig(position_quantum=0.0)
        f, A, n = 1.0, 0.05, 1200
        t = np.arange(n) / cfg.rate
        x = A * np.sin(2 * np.pi * f * t)[:, None]
        q, dq, ddq = simworld.derive_states(x, cfg)
        basis = np.stack([np.sin(2 * np.pi * f * t[400:]),
                          np.cos(2 * np.pi * f * t[400:])], axis=1)
        for channel, y in (("q", q), ("dq", dq), ("ddq", ddq)):
            H = simworld.channel_response(cfg, f, channel)
            cs = np.linalg.lstsq(basis, y[400:, 0], rcond=None)[0]
            amp = np.hypot(*cs)
            phase = np.arctan2(cs[1], cs[0])
            assert abs(amp - abs(H) * A) / (abs(H) * A) < 1e-3
            err = (phase - np.angle(H) + np.pi) % (2 * np.pi) - np.pi
            assert abs(err) < 5e-3

    def test_channels_share_delay(self):
        # the averager/differencer pairing equalizes the group delay of all
        # three outputs; check the implied delays agree and match the
        # analytic number
        cfg = simworld.SensorConfig()
        for f in (0.5, 1.0, 2.0):
            om = 2 * np.pi * f / cfg.rate
            d_q = -np.angle(simworld.channel_response(cfg, f, "q")) / om
            d_dq = -(np.angle(simworld.channel_response(cfg, f, "dq")) - np.pi / 2) / om
            d_dd = -(np.angle(simworld.channel_response(cfg, f, "ddq")) - np.pi) / om
            assert abs(d_q - d_dq) < 1e-6
            assert abs(d_q - d_dd) < 1e-6
        assert abs(simworld.pipeline_delay_samples(cfg)
                   - d_q) < 0.2  # low-freq limit vs 2 Hz dispersion

    def test_noise_gain_matches_measurement(self):
        cfg = simworld.SensorConfig(position_quantum=0.0)
        rng = np.random.default_rng(0)
        sigma = 1e-5
        x = rng.normal(scale=sigma, size=(20000, 1))
        q, dq, ddq = simworld.derive_states(x, cfg)
        measured = ddq[200:].std()
        assert abs(measured - sigma * simworld.noise_gain(cfg, "ddq")) \
            < 0.05 * measured

    def test_reset_reinitializes(self):
        cfg = simworld.SensorConfig()
        f = simworld.StateFilter(cfg)
        for _ in range(40):
            f.push(np.linspace(0, 1, 6))
        f.reset()
        q, dq, ddq = f.push(np.full(6, 0.5))
        assert np.abs(dq).max() < 1e-9
        assert np.abs(ddq).max() < 1e-9
