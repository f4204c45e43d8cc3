import numpy as np
import pytest

from conftest import random_states
from wrenchest import dyncore
from wrenchest.dyncore import kernels


def sympy_fk(model, q):
    """Independent symbolic-arithmetic FK oracle (50-digit floats)."""
    import sympy as sp
    T = sp.eye(4)
    for i in range(6):
        al = sp.Float(model.dh[i, 0], 50)
        a = sp.Float(model.dh[i, 1], 50)
        d = sp.Float(model.dh[i, 2], 50)
        th = sp.Float(q[i] + model.dh[i, 3], 50)
        ca, sa = sp.cos(al), sp.sin(al)
        ct, st = sp.cos(th), sp.sin(th)
        A = sp.Matrix([[ct, -st, 0, a],
                       [st * ca, ct * ca, -sa, -d * sa],
                       [st * sa, ct * sa, ca, d * ca],
                       [0, 0, 0, 1]])
        T = T @ A
    return np.array([[float(sp.N(T[i, j], 25)) for j in range(4)] for i in range(4)])


class TestKinematics:
    def test_fk_zero_matches_selftest_block(self, model):
        T = dyncore.fk(model, np.zeros(6))
        assert np.max(np.abs(T[:3, 3] - model.selftest_pos)) < 1e-12
        assert np.max(np.abs(T[:3, :3] - model.selftest_rot)) < 1e-12

    def test_fk_matches_symbolic_oracle(self, model):
        rng = np.random.default_rng(3)
        for q in [np.zeros(6), *rng.uniform(model.q_min, model.q_max, size=(3, 6))]:
            T = dyncore.fk(model, q)
            assert np.max(np.abs(T - sympy_fk(model, q))) < 1e-12

    def test_rotations_orthonormal(self, model):
        q, _, _ = random_states(model, 1000, seed=11)
        for qi in q:
            R = dyncore.fk(model, qi)[:3, :3]
            assert np.max(np.abs(R @ R.T - np.eye(3))) < 1e-12
            assert abs(np.linalg.det(R) - 1.0) < 1e-12

    def test_jacobian_matches_finite_difference(self, model):
        q, _, _ = random_states(model, 100, seed=12)
        eps = 1e-6
        for qi in q:
            J = dyncore.jacobian(model, qi)
            scale = np.max(np.abs(J)) + 1.0
            for k in range(6):
                dp = np.zeros(6)
                dp[k] = eps
                Tp = dyncore.fk(model, qi + dp)
                Tm = dyncore.fk(model, qi - dp)
                dpos = (Tp[:3, 3] - Tm[:3, 3]) / (2 * eps)
                assert np.max(np.abs(dpos - J[:3, k])) / scale < 1e-6
                # angular column from the FD rotation increment
                dR = (Tp[:3, :3] - Tm[:3, :3]) / (2 * eps) @ dyncore.fk(model, qi)[:3, :3].T
                w = np.array([dR[2, 1], dR[0, 2], dR[1, 0]])
                assert np.max(np.abs(w - J[3:, k])) / scale < 1e-6

    def test_shipped_singular_configuration(self, model):
        J = dyncore.jacobian(model, model.singular_q)
        assert np.linalg.svd(J, compute_uv=False)[-1] < 1e-9

    def test_wrench_map_matches_virtual_work(self, model):
        # tau = J^T F must equal the configuration gradient of the work a
        # fixed wrench does on the end effector
        rng = np.random.default_rng(13)
        q, _, _ = random_states(model, 20, seed=14)
        eps = 1e-6
        for qi in q:
            F = rng.normal(size=6) * [10, 10, 10, 2, 2, 2]
            tau = dyncore.jacobian(model, qi).T @ F
            for k in range(6):
                dp = np.zeros(6)
                dp[k] = eps
                Tp = dyncore.fk(model, qi + dp)
                Tm = dyncore.fk(model, qi - dp)
                dwork = F[:3] @ (Tp[:3, 3] - Tm[:3, 3])
                dR = (Tp[:3, :3] - Tm[:3, :3]) @ dyncore.fk(model, qi)[:3, :3].T
                dtheta = np.array([dR[2, 1], dR[0, 2], dR[1, 0]])
                dwork += F[3:] @ dtheta
                assert abs(dwork / (2 * eps) - tau[k]) < 1e-5 * max(1.0, abs(tau[k]))

    def test_ik_reaches_pose_and_continues_branch(self, model):
        rng = np.random.default_rng(15)
        for _ in range(10):
            q_true = rng.uniform(0.8 * model.q_min, 0.8 * model.q_max)
            target = dyncore.fk(model, q_true)
            q = dyncore.ik_solve(model, target, q_true + rng.normal(scale=0.05, size=6))
            T = dyncore.fk(model, q)
            assert np.linalg.norm(T[:3, 3] - target[:3, 3]) < 1e-7
            assert np.max(np.abs(T[:3, :3] - target[:3, :3])) < 1e-6


class TestDynamics:
    def test_inverse_dynamics_at_rest_is_gravity(self, model):
        q, _, _ = random_states(model, 50, seed=21)
        z = np.zeros(6)
        for qi in q:
            tau = dyncore.inverse_dynamics(model, qi, z, z, friction="none")
            assert np.max(np.abs(tau - dyncore.gravity(model, qi))) < 1e-12

    def test_inverse_dynamics_matches_matrix_assembly(self, model):
        q, dq, ddq = random_states(model, 1000, seed=22)
        worst = 0.0
        for qi, dqi, ddqi in zip(q, dq, ddq):
            tau = dyncore.inverse_dynamics(model, qi, dqi, ddqi, friction="sigmoid")
            M = dyncore.mass_matrix(model, qi)
            C = dyncore.coriolis_matrix(model, qi, dqi)
            ref = (M @ ddqi + C @ dqi + dyncore.gravity(model, qi)
                   + dyncore.friction_torque(model, dqi, "sigmoid"))
            worst = max(worst, np.max(np.abs(tau - ref)))
        assert worst < 1e-10

    def test_gravity_matches_potential_gradient(self, model):
        # g(q) must be the configuration gradient of the potential energy
        q, _, _ = random_states(model, 30, seed=29)
        eps = 1e-6
        for qi in q:
            g = dyncore.gravity(model, qi)
            for k in range(6):
                dp = np.zeros(6)
                dp[k] = eps
                dU = (dyncore.potential_energy(model, qi + dp)
                      - dyncore.potential_energy(model, qi - dp)) / (2 * eps)
                assert abs(dU - g[k]) < 1e-6 * max(1.0, abs(g[k]))

    def test_mass_matrix_matches_link_twist_energy(self, model):
        # independent route: kinetic energy from per-link twists obtained by
        # finite differences of the frame chain, then M by polarization
        q, _, _ = random_states(model, 10, seed=30)
        eps = 1e-6

        def kin_energy(qi, v):
            E = 0.0
            Tp = dyncore.frame_poses(model, qi + eps * v)
            Tm = dyncore.frame_poses(model, qi - eps * v)
            T0 = dyncore.frame_poses(model, qi)
            for i in range(6):
                Rdot = (Tp[i + 1, :3, :3] - Tm[i + 1, :3, :3]) / (2 * eps)
                pdot = (Tp[i + 1, :3, 3] - Tm[i + 1, :3, 3]) / (2 * eps)
                R = T0[i + 1, :3, :3]
                Wb = Rdot @ R.T
                w_world = np.array([Wb[2, 1], Wb[0, 2], Wb[1, 0]])
                w_link = R.T @ w_world
                v_com = pdot + np.cross(w_world, R @ model.com[i])
                E += 0.5 * model.mass[i] * v_com @ v_com
                E += 0.5 * w_link @ model.inertia[i] @ w_link
            return E

        rng = np.random.default_rng(33)
        for qi in q:
            M = dyncore.mass_matrix(model, qi)
            for _ in range(4):
                u = rng.normal(size=6)
                v = rng.normal(size=6)
                # polarization of the quadratic form: T(u+v) - T(u) - T(v) = u^T M v
                lhs = kin_energy(qi, u + v) - kin_energy(qi, u) - kin_energy(qi, v)
                rhs = u @ M @ v
                assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(rhs))

    def test_mass_matrix_spd(self, model):
        q, _, _ = random_states(model, 200, seed=23)
        for qi in q:
            M = dyncore.mass_matrix(model, qi)
            assert np.max(np.abs(M - M.T)) < 1e-12
            assert np.min(np.linalg.eigvalsh(M)) > 0

    def test_coriolis_skew_symmetry(self, model):
        # x^T (dM/dt - 2C) x must vanish; dM/dt by central differences
        q, dq, _ = random_states(model, 1000, seed=24)
        rng = np.random.default_rng(25)
        h = 1e-6
        worst = 0.0
        for qi, dqi in zip(q, dq):
            C = dyncore.coriolis_matrix(model, qi, dqi)
            Mdot = (dyncore.mass_matrix(model, qi + h * dqi)
                    - dyncore.mass_matrix(model, qi - h * dqi)) / (2 * h)
            S = Mdot - 2 * C
            x = rng.normal(size=6)
            worst = max(worst, abs(x @ S @ x) / (x @ x))
        assert worst < 1e-6

    def test_coriolis_linear_in_velocity(self, model):
        q, dq, _ = random_states(model, 20, seed=26)
        for qi, dqi in zip(q, dq):
            C1 = dyncore.coriolis_matrix(model, qi, dqi)
            C2 = dyncore.coriolis_matrix(model, qi, 2 * dqi)
            assert np.max(np.abs(C2 - 2 * C1)) < 1e-9

    def test_forward_inverse_round_trip(self, model):
        q, dq, ddq = random_states(model, 1000, seed=27)
        worst = 0.0
        for qi, dqi, ddqi in zip(q, dq, ddq):
            tau = dyncore.inverse_dynamics(model, qi, dqi, ddqi, friction="sigmoid")
            back = dyncore.forward_dynamics(model, qi, dqi, tau, friction="sigmoid")
            worst = max(worst, np.max(np.abs(back - ddqi)))
        assert worst < 1e-8

    def test_forward_dynamics_equilibrium(self, model):
        q, _, _ = random_states(model, 20, seed=28)
        z = np.zeros(6)
        for qi in q:
            ddq = dyncore.forward_dynamics(model, qi, z, dyncore.gravity(model, qi),
                                           friction="sigmoid")
            assert np.max(np.abs(ddq)) == 0.0

    def test_forward_dynamics_rejects_singular_mass_matrix(self, model):
        # massless wrist links leave the last joints with no inertia at all
        bad = model.copy()
        bad.mass[4:] = 0.0
        bad.inertia[4:] = 0.0
        with pytest.raises(dyncore.ModelError, match="singular"):
            dyncore.forward_dynamics(bad, np.zeros(6), np.zeros(6), np.zeros(6))

    def test_passive_energy_conservation(self, model):
        # no gravity, no friction: RK4 at 0.5 ms must hold kinetic energy
        # to 0.1% over 10 s
        m = model.copy()
        m.gravity = np.zeros(3)
        q = np.array([0.3, -0.8, 0.7, 0.4, 0.9, -0.5])
        dq = np.array([0.5, -0.4, 0.6, -0.8, 0.7, 0.9])
        e0 = dyncore.kinetic_energy(m, q, dq)
        h = 5e-4
        zeros = np.zeros(6)
        for _ in range(20000):
            k1q, k1v = dq, dyncore.forward_dynamics(m, q, dq, zeros, friction="none")
            k2q = dq + 0.5 * h * k1v
            k2v = dyncore.forward_dynamics(m, q + 0.5 * h * k1q, k2q, zeros, friction="none")
            k3q = dq + 0.5 * h * k2v
            k3v = dyncore.forward_dynamics(m, q + 0.5 * h * k2q, k3q, zeros, friction="none")
            k4q = dq + h * k3v
            k4v = dyncore.forward_dynamics(m, q + h * k3q, k4q, zeros, friction="none")
            q = q + h / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
            dq = dq + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        e1 = dyncore.kinetic_energy(m, q, dq)
        assert abs(e1 - e0) / e0 < 1e-3


class TestFriction:
    def test_sigmoid_mode_exactly_zero_at_rest(self, model):
        tau = dyncore.friction_torque(model, np.zeros(6), "sigmoid")
        assert np.all(tau == 0.0)

    def test_signum_mode_zero_at_rest(self, model):
        tau = dyncore.friction_torque(model, np.zeros(6), "signum")
        assert np.all(tau == 0.0)

    def test_stiction_term_decays(self, model):
        # at dq = 10 sqrt(v_S) the stiction exponential is < 1e-12 of C_S
        vs = model.friction[:, 3]
        cc = model.friction[:, 0]
        cv = model.friction[:, 2]
        dq = 10.0 * np.sqrt(vs)
        tau = dyncore.friction_torque(model, dq, "signum")
        assert np.max(np.abs(tau - (cc + cv * dq))) < 1e-12 * np.min(model.friction[:, 1])

    def test_signum_mode_odd(self, model):
        rng = np.random.default_rng(31)
        for _ in range(20):
            dq = rng.uniform(-3, 3, size=6)
            a = dyncore.friction_torque(model, dq, "signum")
            b = dyncore.friction_torque(model, -dq, "signum")
            assert np.max(np.abs(a + b)) < 1e-12

    def test_sigmoid_tracks_coulomb_at_speed(self, model):
        # away from standstill the smooth and signum forms agree closely
        # because phi1 was chosen as twice the coulomb level
        dq = np.full(6, 1.0)
        a = dyncore.friction_torque(model, dq, "sigmoid")
        b = dyncore.friction_torque(model, dq, "signum")
        assert np.max(np.abs(a - b)) < 0.05 * np.max(np.abs(b))

    def test_friction_dissipates(self, model):
        rng = np.random.default_rng(32)
        for mode in ("signum", "sigmoid"):
            for _ in range(50):
                dq = rng.uniform(-3, 3, size=6)
                p = dq @ dyncore.friction_torque(model, dq, mode)
                assert p >= 0.0
