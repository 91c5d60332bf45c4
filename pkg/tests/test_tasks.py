import gzip
import hashlib

import numpy as np
import pytest

from oracles import central_difference, toy2d_loss_scalar
from pesgrad import ConfigError, IdxFormatError, full_gradient, full_loss, unroll
from pesgrad.gradcheck import fd_step_jacobians
from pesgrad.tasks import (
    SCENARIOS,
    InfluenceBalancingTask,
    LrDecayMlpTask,
    QuadraticScenarioTask,
    Toy2DRegressionTask,
    inner_grad,
    load_idx_dataset,
    make_task,
    scenario_coefficients,
    write_idx,
)


class TestMakeTask:
    def test_influence_defaults(self):
        task = make_task("influence_balancing")
        assert (task.state_dim, task.param_dim, task.horizon) == (23, 1, 100)
        assert task.has_jacobians
        np.testing.assert_array_equal(task.signs, [1.0] * 10 + [-1.0] * 13)
        assert task.A[0, 0] == 0.5 and task.A[0, 1] == 0.5 and task.A[22, 22] == 0.5
        assert np.count_nonzero(task.A) == 23 + 22

    def test_quadratic_unit_gradient(self):
        task = make_task("quadratic", {"P": 1, "T": 1, "g_norm": 1.0, "scenario": "diag_identical"})
        g = task.analytic_gradient(task.default_theta())
        assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-15)

    def test_toy2d_reproducible(self):
        a = make_task("toy2d", {"T": 100})
        b = make_task("toy2d", {"T": "100"})
        th = np.log([0.01, 0.01])
        assert full_loss(a, th) == full_loss(b, th)

    def test_capabilities(self):
        assert make_task("toy2d").has_jacobians
        assert make_task("quadratic").has_jacobians
        assert not make_task("mlp", {"T": 5}).has_jacobians

    def test_unknown_task(self):
        with pytest.raises(ConfigError) as err:
            make_task("swimmer")
        assert err.value.field == "task.name"

    def test_malformed_field(self):
        with pytest.raises(ConfigError) as err:
            make_task("toy2d", {"T": "ten"})
        assert err.value.field == "task.T"

    def test_unknown_field(self):
        with pytest.raises(ConfigError) as err:
            make_task("toy2d", {"bogus": 1})
        assert err.value.field == "task.bogus"

    def test_toy2d_init_options(self):
        assert np.array_equal(make_task("toy2d", {"init_theta": "-4.5 -4.5"}).default_theta(), [-4.5, -4.5])
        np.testing.assert_allclose(make_task("toy2d").default_theta(), np.log([0.01, 0.01]))


class TestInfluence:
    def test_steady_state(self):
        # Fixed point of s = A s + b theta has first coordinate -6 theta.
        task = InfluenceBalancingTask(horizon=400)
        res = unroll(task, task.init_state(), [0.25], 400)
        assert res.final_state.values[0] == pytest.approx(-1.5, abs=1e-9)


class TestToy2D:
    def test_inner_grad_matches_fd(self):
        rng = np.random.default_rng(1)
        for x in rng.uniform(-3, 3, size=(20, 2)):
            fd = central_difference(lambda v: toy2d_loss_scalar(*v), x, rel_step=1e-6)
            np.testing.assert_allclose(inner_grad(x), fd, rtol=1e-6, atol=1e-9)

    def test_kink_subgradient_is_zero(self):
        assert inner_grad(np.array([0.0, 100.0]))[1] == pytest.approx(np.sin(200.0))

    def test_schedule_endpoints(self):
        task = Toy2DRegressionTask(horizon=100)
        th = np.array([[np.log(0.3), np.log(0.05)]])
        assert task.learning_rates(0, th)[0] == pytest.approx(0.3)
        assert task.learning_rates(50, th)[0] == pytest.approx(0.175)

    def test_loss_is_post_update(self):
        task = Toy2DRegressionTask(horizon=10)
        th = np.log([0.1, 0.1])
        state, loss = task.step(task.init_state(), th)
        x = np.array([1.0, 1.0]) - 0.1 * inner_grad(np.array([1.0, 1.0]))
        np.testing.assert_allclose(state.values, x, rtol=1e-15)
        assert loss == pytest.approx(toy2d_loss_scalar(*x), rel=1e-14)

    def test_jacobians_match_fd(self):
        task = Toy2DRegressionTask(horizon=100)
        th = np.array([-1.0, -2.0])
        state = task.init_state()
        for t in range(60):
            if t % 7 == 0 and task.kink_distance(state) > 1e-6:
                H_fd, F_fd, _, _ = fd_step_jacobians(task, state, th)
                np.testing.assert_allclose(task.jac_state(state, th), H_fd, rtol=1e-4, atol=1e-8)
                np.testing.assert_allclose(task.jac_param(state, th), F_fd, rtol=1e-4, atol=1e-8)
            state, _ = task.step(state, th)


class TestQuadratic:
    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_structure_and_norm(self, scenario):
        P, T = 3, 5
        h = scenario_coefficients(scenario, P, T, g_norm=2.0, seed=4)
        lower = np.tril(np.ones((T, T)), -1).astype(bool)
        assert np.all(h[lower] == 0)
        if scenario.startswith("diag"):
            assert np.all(h[~np.eye(T, dtype=bool)] == 0)
        total = h.sum(axis=(0, 1))
        if scenario.endswith("identical"):
            assert np.linalg.norm(total) == pytest.approx(2.0, rel=1e-12)
        else:
            count = T if scenario.startswith("diag") else T * (T + 1) // 2
            nz = np.linalg.norm(h, axis=-1)[np.linalg.norm(h, axis=-1) > 0]
            assert len(nz) == count
            np.testing.assert_allclose(nz**2 * count, 4.0, rtol=1e-12)

    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_analytic_gradient_matches_fd(self, scenario):
        task = QuadraticScenarioTask.from_scenario(scenario, 3, 4, g_norm=1.5, seed=2, curvature=0.8, leak=0.4)
        th = np.array([0.4, -0.7, 0.2])
        fd = central_difference(lambda t: full_loss(task, t), th)
        np.testing.assert_allclose(task.analytic_gradient(th), fd, rtol=1e-6)
        np.testing.assert_allclose(full_gradient(task, th), task.analytic_gradient(th), rtol=1e-12)

    def test_analytic_loss(self):
        task = QuadraticScenarioTask.from_scenario("uppertri_identical", 2, 6, curvature=1.3, leak=0.5)
        th = np.array([0.3, -1.1])
        assert full_loss(task, th) == pytest.approx(task.analytic_loss(th), rel=1e-12)

    def test_per_step_gradient_matrix(self):
        # Perturbing theta only at step tau moves L_t by h[tau, t] . delta.
        task = QuadraticScenarioTask.from_scenario("uppertri_iid", 2, 4, seed=5)
        delta = np.array([0.3, -0.2])
        for tau in range(4):
            state = task.init_state()
            base, pert = [], []
            s_b, s_p = state, state
            for t in range(4):
                s_b, lb = task.step(s_b, np.zeros(2))
                s_p, lp = task.step(s_p, delta if t == tau else np.zeros(2))
                base.append(lb)
                pert.append(lp)
            diff = np.array(pert) - np.array(base)
            expected = [task.coeffs[tau, t] @ delta for t in range(4)]
            np.testing.assert_allclose(diff, expected, atol=1e-15)


class TestMlp:
    def test_weight_gradient_matches_fd(self):
        task = LrDecayMlpTask(horizon=5, hidden=5)
        w = task.init_values()[: task.n_weights]
        x, y = task.x_train[:16], task.y_train[:16]
        g = task.weight_grad(w, x, y)
        fd = central_difference(lambda v: task.weight_loss(v, x, y), w)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_schedule(self):
        task = LrDecayMlpTask(horizon=5)
        th = np.array([[np.log(0.2), np.log(0.5)]])
        assert task.learning_rates(5000, th)[0] == pytest.approx(0.2 / 2**0.5)

    def test_training_reduces_loss(self):
        task = LrDecayMlpTask(horizon=150)
        res = unroll(task, task.init_state(), np.array([np.log(0.1), 0.0]), 150, keep_losses=True)
        assert res.per_step_losses[-20:].mean() < 0.7 * res.per_step_losses[0]

    def test_val_error_objective(self):
        task = LrDecayMlpTask(horizon=100, objective="val_error")
        res = unroll(task, task.init_state(), np.array([np.log(0.1), 0.0]), 100, keep_losses=True)
        assert np.all((res.per_step_losses >= 0) & (res.per_step_losses <= 1))
        assert res.per_step_losses[-1] < 0.3

    def test_fixed_batch_deterministic_batches(self):
        a = LrDecayMlpTask(horizon=20, fixed_batch=True)
        b = LrDecayMlpTask(horizon=20, fixed_batch=True)
        th = np.array([np.log(0.1), 0.0])
        assert unroll(a, a.init_state(), th, 20).loss_sum == unroll(b, b.init_state(), th, 20).loss_sum
        assert np.array_equal(a.batch_indices(3), b.batch_indices(3))

    def test_batch_rows_independent(self):
        task = LrDecayMlpTask(horizon=10)
        rng = np.random.default_rng(0)
        thetas = np.array([np.log(0.1), 0.0]) + 0.3 * rng.standard_normal((6, 2))
        values = np.tile(task.init_values(), (6, 1))
        v_all, l_all = task.step_batch(values, 0, thetas)
        for i in range(6):
            v_i, l_i = task.step_batch(values[i : i + 1], 0, thetas[i : i + 1])
            np.testing.assert_allclose(v_all[i], v_i[0], rtol=1e-13, atol=1e-15)
            assert l_all[i] == pytest.approx(l_i[0], rel=1e-13)


def _reference_idx_image(raw):
    """Independent IDX parse: header via int.from_bytes, first image bytes."""
    ndim = raw[3]
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    size = dims[1] * dims[2]
    start = 4 + 4 * ndim
    return dims, raw[start : start + size]


class TestIdx:
    def _fixture(self, tmp_path, n=4, gz=False):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(n, 3, 5), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n, dtype=np.uint8)
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        write_idx(ip, images)
        write_idx(lp, labels)
        if gz:
            ip.write_bytes(gzip.compress(ip.read_bytes()))
        return ip, lp, images, labels

    def test_four_images(self, tmp_path):
        ip, lp, images, labels = self._fixture(tmp_path)
        ds = load_idx_dataset(ip, lp)
        assert ds.images.shape == (4, 15) and ds.shape == (3, 5)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        np.testing.assert_array_equal(ds.images * 255.0, images.reshape(4, -1))
        np.testing.assert_array_equal(ds.labels, labels)

    def test_gzip(self, tmp_path):
        ip, lp, images, _ = self._fixture(tmp_path, gz=True)
        np.testing.assert_array_equal(load_idx_dataset(ip, lp).images * 255.0, images.reshape(4, -1))

    def test_first_image_checksum(self, tmp_path):
        ip, _, _, _ = self._fixture(tmp_path, n=7)
        raw = ip.read_bytes()
        dims, first = _reference_idx_image(raw)
        ds = load_idx_dataset(ip)
        assert dims == [7, 3, 5]
        ours = np.round(ds.images[0] * 255).astype(np.uint8).tobytes()
        assert hashlib.sha256(ours).hexdigest() == hashlib.sha256(first).hexdigest()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 16)
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_dataset(path)

    def test_truncated(self, tmp_path):
        ip, _, _, _ = self._fixture(tmp_path)
        ip.write_bytes(ip.read_bytes()[:-3])
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx_dataset(ip)

    def test_label_count_mismatch(self, tmp_path):
        ip, _, _, _ = self._fixture(tmp_path)
        lp = tmp_path / "short.idx"
        write_idx(lp, np.zeros(3, dtype=np.uint8))
        with pytest.raises(IdxFormatError):
            load_idx_dataset(ip, lp)

    def test_mlp_from_idx(self, tmp_path):
        ip, lp, _, _ = self._fixture(tmp_path, n=200)
        task = make_task("mlp", {"T": 5, "images": str(ip), "labels": str(lp), "batch_size": 16})
        assert task.n_in == 15
        unroll(task, task.init_state(), task.default_theta(), 5)
