"""Dataset generators: free-space, contact-sliding, hand-guiding, splits, IO."""

import numpy as np
import pytest

from wrenchest import datagen
from wrenchest.datagen import Dataset, GenerationError
from wrenchest.dyncore import ModelError, kernels


@pytest.fixture(scope="module")
def fsds(model):
    return datagen.gen_fsds(model, seed=11, n_waypoints=20)


@pytest.fixture(scope="module")
def csds(model):
    return datagen.gen_csds(model, seed=21, n_points=4, hold=6.0)


@pytest.fixture(scope="module")
def hgds(model):
    return datagen.gen_hgds(model, seed=31, duration=90.0)


def flange_velocity(model, ds):
    v = np.empty((len(ds), 3))
    for i in range(len(ds)):
        J = kernels.jacobian(model.dh, ds.q[i])
        v[i] = J[:3] @ ds.dq[i]
    return v


def motion_force_cosine(model, ds):
    """Mean cosine between flange velocity and applied force, where both
    are large enough to have a direction."""
    f = ds.wrench[:, :3]
    v = flange_velocity(model, ds)
    fn = np.linalg.norm(f, axis=1)
    vn = np.linalg.norm(v, axis=1)
    m = (fn > 2.0) & (vn > 2e-3)
    cos = np.sum(f[m] * v[m], axis=1) / (fn[m] * vn[m])
    return cos.mean(), int(m.sum())


class TestDatasetContainer:
    def test_round_trip_is_bit_exact(self, csds, tmp_path):
        p = tmp_path / "c.csv"
        csds.write(p)
        back = Dataset.read(p)
        assert back == csds
        # == already covers arrays; spot check the metadata side too
        assert back.tag == "CSDS" and back.seed == 21
        assert back.digest == csds.digest

    def test_missing_sidecar_rejected(self, csds, tmp_path):
        p = tmp_path / "c.csv"
        csds.write(p)
        (tmp_path / "c.csv.meta").unlink()
        with pytest.raises(ModelError, match="sidecar"):
            Dataset.read(p)

    def test_foreign_header_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("time,stuff\n0.0,1.0\n")
        with pytest.raises(ModelError, match="header"):
            Dataset.read(p)

    def test_sidecar_frame_count_checked(self, csds, tmp_path):
        p = tmp_path / "c.csv"
        csds.write(p)
        meta = (tmp_path / "c.csv.meta").read_text()
        (tmp_path / "c.csv.meta").write_text(
            meta.replace(f"frames: {len(csds)}", "frames: 7"))
        with pytest.raises(ModelError, match="frame count"):
            Dataset.read(p)

    def test_feature_matrix_layout(self, fsds):
        X = fsds.features()
        assert X.shape == (len(fsds), 24)
        assert np.array_equal(X[:, 0:6], fsds.q)
        assert np.array_equal(X[:, 6:12], fsds.dq)
        assert np.array_equal(X[:, 12:18], fsds.ddq)
        assert np.array_equal(X[:, 18:24], fsds.current)
        assert fsds.labels() is fsds.wrench

    def test_validation_guards(self, model):
        n = 5
        cols = dict(t=np.arange(n) * datagen.DT,
                    q=np.zeros((n, 6)), dq=np.zeros((n, 6)),
                    ddq=np.zeros((n, 6)), current=np.zeros((n, 6)),
                    wrench=np.zeros((n, 6)), contact=np.zeros(n, bool))
        Dataset("TEST", 0, "d", **cols)           # baseline is fine

        with pytest.raises(ModelError, match="tag"):
            Dataset("BOGUS", 0, "d", **cols)

        bad = dict(cols, t=cols["t"] + np.array([0, 0, 0.003, 0, 0]))
        with pytest.raises(ModelError, match="grid"):
            Dataset("TEST", 0, "d", **bad)

        bad = dict(cols, t=cols["t"][::-1].copy())
        with pytest.raises(ModelError, match="increasing"):
            Dataset("TEST", 0, "d", **bad)

        w = cols["wrench"].copy()
        w[2, 4] = np.nan
        with pytest.raises(ModelError, match="non-finite"):
            Dataset("TEST", 0, "d", **dict(cols, wrench=w))

        with pytest.raises(ModelError, match="contact"):
            Dataset("TEST", 0, "d", **dict(cols, contact=np.zeros(n + 1, bool)))

        with pytest.raises(ModelError, match="shape"):
            Dataset("TEST", 0, "d", **dict(cols, dq=np.zeros((n, 5))))

    def test_gaps_on_grid_are_allowed(self):
        # splits remove whole blocks, so multi-step gaps must validate
        t = np.array([0.0, 0.01, 0.05, 0.06])
        n = len(t)
        Dataset("TEST", 0, "d", t, np.zeros((n, 6)), np.zeros((n, 6)),
                np.zeros((n, 6)), np.zeros((n, 6)), np.zeros((n, 6)),
                np.zeros(n, bool))

    def test_config_digest_distinguishes_settings(self):
        a = datagen.config_digest(kind="fsds", seed=1, n=80)
        b = datagen.config_digest(kind="fsds", seed=2, n=80)
        c = datagen.config_digest(kind="fsds", n=80, seed=1)
        assert a != b
        assert a == c          # keyword order must not matter
        assert len(a) == 12


class TestFreeSpace:
    def test_velocities_stay_inside_half_limits(self, model, fsds):
        p95 = np.percentile(np.abs(fsds.dq), 95, axis=0)
        assert np.all(p95 < 0.5 * model.dq_max)

    def test_motion_and_wrench_uncorrelated(self, model, fsds):
        cos, n = motion_force_cosine(model, fsds)
        assert n > 500                # enough frames to mean something
        assert abs(cos) < 0.1

    def test_no_contact_and_labels_within_injection_bounds(self, fsds):
        assert not fsds.contact.any()
        assert np.abs(fsds.wrench[:, :3]).max() < 3 * 20.0
        assert np.abs(fsds.wrench[:, 3:]).max() < 3 * 0.6

    def test_zero_injection_labels_exactly_zero(self, model):
        ds = datagen.gen_fsds(model, seed=11, n_waypoints=5, injection=False)
        assert np.all(ds.wrench == 0.0)

    def test_same_seed_same_bytes(self, model):
        a = datagen.gen_fsds(model, seed=7, n_waypoints=4)
        b = datagen.gen_fsds(model, seed=7, n_waypoints=4)
        c = datagen.gen_fsds(model, seed=8, n_waypoints=4)
        assert a == b
        assert a != c

    def test_unreachable_box_center_faults(self, model):
        box = np.array([[1.0, 1.2], [-0.1, 0.1], [0.2, 0.4]])
        with pytest.raises(GenerationError, match="out of reach"):
            datagen.gen_fsds(model, seed=1, n_waypoints=3, box=box)

    def test_ik_resample_budget_exhausts(self, model):
        # box center is reachable but most of the volume is not
        box = np.array([[-0.1, 1.0], [-0.5, 0.5], [0.1, 0.54]])
        with pytest.raises(GenerationError, match="budget"):
            datagen.gen_fsds(model, seed=1, n_waypoints=3, ik_budget=4,
                             box=box)


class TestContactSliding:
    def test_hold_force_tracking(self, csds):
        gs = csds.gen_stats
        hold = gs["phase"] == datagen.PHASE_HOLD
        err = csds.wrench[hold, 2] - gs["f_ref"][hold]
        assert np.sqrt(np.mean(err ** 2)) < 1.5

    def test_slide_friction_opposes_motion(self, csds):
        gs = csds.gen_stats
        sm = gs["phase"] == datagen.PHASE_SLIDE
        dots = np.sum(csds.wrench[sm, :2] * gs["slide_dir"][sm], axis=1)
        assert np.mean(dots < 0) > 0.95

    def test_contact_flag_matches_planned_duty(self, csds):
        gs = csds.gen_stats
        assert abs(gs["duty"] - csds.contact.mean()) < 0.02

    def test_label_ranges(self, csds):
        fz = csds.wrench[:, 2]
        assert fz.min() >= 0.0 and fz.max() <= 35.0
        # flat frictionless-torque contact: moment labels stay zero
        assert np.all(csds.wrench[:, 3:] == 0.0)

    def test_no_retries_needed(self, csds):
        assert csds.gen_stats["retries"] == 0

    def test_determinism(self, model):
        a = datagen.gen_csds(model, seed=5, n_points=3, hold=3.0)
        b = datagen.gen_csds(model, seed=5, n_points=3, hold=3.0)
        assert a == b

    def test_unreachable_patch_faults(self, model):
        from wrenchest.simworld import ContactPlane
        plane = ContactPlane(point=np.array([1.1, 0.0, 0.18]),
                             normal=np.array([0.0, 0.0, 1.0]))
        with pytest.raises(GenerationError, match="reach"):
            datagen.gen_csds(model, seed=1, n_points=2, plane=plane)

    def test_contact_watch_trips_at_limit(self):
        w = datagen._ContactWatch(threshold=0.5, limit=5)
        for _ in range(4):
            assert not w.push(0.1)
        assert w.push(0.1)            # fifth consecutive low sample
        w.reset()
        for _ in range(4):
            w.push(0.1)
        assert not w.push(2.0)        # healthy sample clears the count
        assert not w.push(0.1)


class TestHandGuiding:
    def test_robot_complies_with_applied_force(self, model, hgds):
        cos, n = motion_force_cosine(model, hgds)
        assert n > 1000
        assert cos > 0.7

    def test_no_drift_without_force(self, model, hgds):
        # between injection windows the arm must hold still (admittance
        # integrates noise otherwise).  Paused stretches are excluded:
        # the recovery pull moves the arm there on purpose.
        fn = (np.linalg.norm(hgds.wrench[:, :3], axis=1)
              + np.linalg.norm(hgds.wrench[:, 3:], axis=1))
        quiet = (fn < 1e-12) & ~hgds.gen_stats["paused"]
        flange = np.array([kernels.fk(model.dh, q)[:3, 3] for q in hgds.q])
        worst = 0.0
        i, n = 0, len(hgds)
        while i < n:
            if not quiet[i]:
                i += 1
                continue
            j = i
            while j < n and quiet[j]:
                j += 1
            if j - i > 150:           # skip the first 1 s of settling
                worst = max(worst, np.linalg.norm(flange[j - 1]
                                                  - flange[i + 100]))
            i = j
        assert worst < 1e-3

    def test_pause_gates_injection_and_recovers(self, model):
        box = np.array([[0.37, 0.47], [-0.05, 0.05], [0.27, 0.37]])
        ds = datagen.gen_hgds(model, seed=32, duration=30.0, box=box)
        gs = ds.gen_stats
        assert gs["pauses"] >= 1
        paused = gs["paused"]
        assert paused.any()
        assert np.all(ds.wrench[paused] == 0.0)   # labels honest while gated
        first = np.argmax(paused)
        assert not paused[first:].all()           # recovery pull releases it

    def test_box_must_fit_hysteresis_band(self, model):
        box = np.array([[0.38, 0.46], [-0.04, 0.04], [0.28, 0.36]])
        with pytest.raises(ModelError, match="box too small"):
            datagen.gen_hgds(model, seed=1, duration=5.0, box=box,
                             margin=0.02)

    def test_determinism(self, model):
        a = datagen.gen_hgds(model, seed=9, duration=10.0)
        b = datagen.gen_hgds(model, seed=9, duration=10.0)
        assert a == b

    def test_no_contact_frames(self, hgds):
        assert not hgds.contact.any()


class TestSplit:
    def test_partition_is_exact(self, fsds):
        tr, va, te = datagen.split(fsds, (0.6, 0.2, 0.2), seed=3)
        assert len(tr) + len(va) + len(te) == len(fsds)
        t_all = np.concatenate([tr.t, va.t, te.t])
        assert len(np.unique(t_all)) == len(fsds)    # no frame in two parts
        assert np.array_equal(np.sort(t_all), fsds.t)

    def test_parts_keep_time_order(self, fsds):
        tr, va, te = datagen.split(fsds, seed=3)
        for part in (tr, va, te):
            assert np.all(np.diff(part.t) > 0)

    def test_block_granularity(self, fsds):
        tr, va, te = datagen.split(fsds, (0.6, 0.2, 0.2), seed=3,
                                   block=datagen.BLOCK)
        # each part is a union of whole 10 s blocks of the parent
        for part in (va, te):
            starts = part.t[np.diff(np.concatenate([[-1.0], part.t]))
                            > 1.5 * datagen.DT]
            idx = np.searchsorted(fsds.t, starts)
            assert np.all(idx % datagen.BLOCK == 0)

    def test_deterministic_and_seed_sensitive(self, fsds):
        a = datagen.split(fsds, seed=3)
        b = datagen.split(fsds, seed=3)
        c = datagen.split(fsds, seed=4)
        for x, y in zip(a, b):
            assert x == y
        assert any(x != y for x, y in zip(a, c))

    def test_digests_distinct(self, fsds):
        parts = datagen.split(fsds, seed=3)
        digests = {p.digest for p in parts} | {fsds.digest}
        assert len(digests) == 4

    def test_bad_fractions_rejected(self, fsds):
        with pytest.raises(ModelError, match="fractions"):
            datagen.split(fsds, (0.5, 0.2, 0.2))
        with pytest.raises(ModelError, match="fractions"):
            datagen.split(fsds, (0.8, 0.3, -0.1))

    def test_too_short_to_split(self, model, fsds):
        short = fsds.subset(np.arange(len(fsds)) < 2 * datagen.BLOCK)
        with pytest.raises(ModelError, match="at least 3 blocks"):
            datagen.split(short)

    def test_every_positive_fraction_gets_a_block(self, fsds):
        tr, va, te = datagen.split(fsds, (0.9, 0.05, 0.05), seed=0)
        assert len(tr) and len(va) and len(te)
