import numpy as np
import pytest

from graphseqrec.autodiff import Tensor
from graphseqrec.checkpoint import CheckpointError, load_archive, save_archive
from graphseqrec.optim import Adam, GradientNaN


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        w = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        before = w.data.copy()
        w.grad = np.zeros(3)
        opt.step()
        np.testing.assert_array_equal(w.data, before)

    def test_first_step_magnitude_is_lr(self):
        # with bias correction, step 1 moves each weight by ~lr * sign(grad)
        w = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.01)
        w.grad = np.array([0.5, -2.0])
        opt.step()
        np.testing.assert_allclose(np.abs(w.data), 0.01, rtol=1e-6)
        assert w.data[0] < 0 < w.data[1]

    def test_quadratic_descent_matches_scalar_reference(self):
        # independent scalar re-implementation of the update rule
        def reference_trajectory(steps, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
            w, m, v = 0.0, 0.0, 0.0
            out = []
            for t in range(1, steps + 1):
                g = 2.0 * (w - 3.0)
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                w -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
                out.append(w)
            return out

        w = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        trajectory = []
        for _ in range(50):
            w.grad = 2.0 * (w.data - 3.0)
            opt.step()
            trajectory.append(float(w.data[0]))
        np.testing.assert_allclose(trajectory, reference_trajectory(50), rtol=1e-12)
        # |w - 3| shrinks monotonically after warmup, all the way into the
        # convergence region where momentum starts to oscillate
        gaps = [abs(value - 3.0) for value in trajectory]
        settled = next(i for i, g in enumerate(gaps) if g < 0.05)
        assert all(b < a for a, b in zip(gaps[2:settled], gaps[3:settled + 1]))
        assert gaps[-1] < 0.2 and gaps[0] > 2.5

    def test_nan_grad_aborts_naming_parameter(self):
        w = Tensor(np.zeros(2), requires_grad=True)
        u = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam({"w": w, "bad_one": u})
        w.grad = np.zeros(2)
        u.grad = np.array([0.0, np.nan])
        before = w.data.copy()
        with pytest.raises(GradientNaN, match="bad_one"):
            opt.step()
        np.testing.assert_array_equal(w.data, before)
        assert opt.step_count == 0

    def test_moments_persist_across_steps(self):
        w = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        w.grad = np.array([1.0])
        opt.step()
        m_after_one = opt.m["w"].copy()
        w.grad = np.array([1.0])
        opt.step()
        assert opt.m["w"][0] > m_after_one[0]
        assert opt.step_count == 2


class TestCheckpointArchive:
    def test_round_trip(self, tmp_path, rng):
        arrays = {
            "item_emb": rng.standard_normal((7, 4)),
            "scalar": np.asarray(3.5),
            "vector": rng.standard_normal(5),
        }
        path = tmp_path / "ckpt.bin"
        save_archive(path, arrays)
        loaded = load_archive(path)
        assert set(loaded) == set(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
            assert loaded[name].dtype == np.float64

    def test_versioned_header_byte(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        save_archive(path, {"x": np.ones(2)})
        blob = bytearray(path.read_bytes())
        assert blob[0] == 1
        blob[0] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 9"):
            load_archive(path)

    def test_deterministic_bytes(self, tmp_path, rng):
        arrays = {"b": rng.standard_normal(3), "a": rng.standard_normal((2, 2))}
        p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
        save_archive(p1, arrays)
        save_archive(p2, dict(reversed(list(arrays.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_optimizer_state_round_trip(self, tmp_path):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.05)
        w.grad = np.array([0.3, -0.1])
        opt.step()
        path = tmp_path / "opt.bin"
        save_archive(path, opt.state_arrays())
        fresh = Adam({"w": Tensor(np.zeros(2), requires_grad=True)}, lr=0.05)
        fresh.load_state_arrays(load_archive(path))
        np.testing.assert_array_equal(fresh.m["w"], opt.m["w"])
        np.testing.assert_array_equal(fresh.v["w"], opt.v["w"])
        assert fresh.step_count == 1
