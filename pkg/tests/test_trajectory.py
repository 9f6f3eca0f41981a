"""trajectory: snapshot store round-trips, sampling schedule, file format."""

import hashlib
import struct

import numpy as np
import pytest

from subtrain import data, model, optim
from subtrain.errors import FormatError, ShapeError
from subtrain.trajectory import SamplingSchedule, TrajectoryStore, due, load_all

# frozen from one seeded run of the loop in test_golden_checksum
GOLDEN_SHA256 = "67a476c1d96e379938162c3a8f421ea626b90e3d29c0f56425f93028a277ab01"


class TestStore:
    def test_record_then_load_round_trip(self, tmp_path):
        path = tmp_path / "t.dltr"
        rng = np.random.default_rng(0)
        snaps = [rng.normal(size=12) for _ in range(4)]
        with TrajectoryStore.create(path) as store:
            for i, w in enumerate(snaps):
                store.record(i, 10 * i + 3, w)
        samples, meta = load_all(path)
        assert samples.shape == (12, 4)
        for i, w in enumerate(snaps):
            assert np.array_equal(samples[:, i], w)
        assert meta == [(i, 10 * i + 3) for i in range(4)]

    def test_append_order_and_t(self, tmp_path):
        path = tmp_path / "t.dltr"
        with TrajectoryStore.create(path) as store:
            store.record(0, 1, np.ones(3))
            assert store.t == 1
            store.record(0, 2, np.full(3, 2.0))
            assert store.t == 2

    def test_snapshot_is_verbatim_copy(self, tmp_path):
        path = tmp_path / "t.dltr"
        w = np.array([1.0, -2.0, 3.0])
        with TrajectoryStore.create(path) as store:
            store.record(0, 0, w)
            w[0] = 99.0  # later mutation must not reach the file
        samples, _ = load_all(path)
        assert np.array_equal(samples[:, 0], [1.0, -2.0, 3.0])

    def test_length_mismatch_rejected(self, tmp_path):
        with TrajectoryStore.create(tmp_path / "t.dltr") as store:
            store.record(0, 0, np.zeros(5))
            with pytest.raises(ShapeError):
                store.record(0, 1, np.zeros(6))

    def test_file_layout(self, tmp_path):
        path = tmp_path / "t.dltr"
        with TrajectoryStore.create(path) as store:
            store.record(3, 77, np.array([1.5, 2.5]))
        raw = path.read_bytes()
        assert raw[:4] == b"DLTR"
        version, n, t = struct.unpack("<IQQ", raw[4:24])
        assert (version, n, t) == (1, 2, 1)
        epoch, gstep = struct.unpack("<IQ", raw[24:36])
        assert (epoch, gstep) == (3, 77)
        assert np.frombuffer(raw[36:], dtype="<f8").tolist() == [1.5, 2.5]

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dltr"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            TrajectoryStore.open(path)

    def test_truncated_body_rejected(self, tmp_path):
        path = tmp_path / "t.dltr"
        with TrajectoryStore.create(path) as store:
            store.record(0, 0, np.zeros(8))
        raw = path.read_bytes()
        (tmp_path / "cut.dltr").write_bytes(raw[:-16])
        with pytest.raises(FormatError, match="shorter"):
            TrajectoryStore.open(tmp_path / "cut.dltr")

    def test_golden_checksum(self, tmp_path):
        # 30 per-epoch records of a fully seeded training run
        ds = data.synthetic_blobs(2, 10, 3, 0.4, seed=6)
        spec = model.ModelSpec((3, 4, 2), "tanh")
        w = model.init_params(spec, 5)
        state = optim.SgdState(velocity=np.zeros_like(w), lr=0.05, momentum=0.9,
                               weight_decay=0.0)
        path = tmp_path / "golden.dltr"
        with TrajectoryStore.create(path) as store:
            gstep = 0
            for epoch in range(30):
                for xb, yb in data.batches(ds, 5, 0, epoch):
                    _, g = model.backward(spec, w, xb, yb)
                    w = optim.sgd_step(w, g, state)
                    gstep += 1
                store.record(epoch, gstep, w)
        assert hashlib.sha256(path.read_bytes()).hexdigest() == GOLDEN_SHA256


class TestDue:
    def test_once_per_epoch_is_last_step(self):
        sched = SamplingSchedule(1, 0, 5)
        hits = [s for s in range(10) if due(sched, 2, s, 10)]
        assert hits == [9]

    def test_even_spacing_three_per_epoch(self):
        sched = SamplingSchedule(3, 0, 5)
        hits = [s for s in range(300) if due(sched, 0, s, 300)]
        assert hits == [99, 199, 299]

    def test_window_excludes_outside_epochs(self):
        sched = SamplingSchedule(1, 2, 4)
        assert not any(due(sched, e, s, 8) for e in (0, 1, 4, 5) for s in range(8))
        assert [s for s in range(8) if due(sched, 2, s, 8)] == [7]

    def test_count_matches_schedule(self):
        sched = SamplingSchedule(2, 1, 6)
        total = sum(due(sched, e, s, 7) for e in range(8) for s in range(7))
        assert total == 2 * (6 - 1)

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError):
            SamplingSchedule(0, 0, 5)
        with pytest.raises(ValueError):
            SamplingSchedule(1, 5, 5)
