import numpy as np
import pytest

from segprobe import (
    FeatureMap,
    ImageSample,
    LabelMask,
    ProbeParams,
    TrainConfig,
    augment,
    build_synthetic_store,
    forward,
    load_checkpoint,
    loss_and_grad,
    masked_ce_loss,
    probe,
    save_checkpoint,
    tensor,
    train,
)
from segprobe.errors import (
    CropSkippedWarning,
    EmptySupervisionWarning,
    InvalidArgumentError,
)


# Oracle: central finite differences of the loss with respect to every
# parameter coordinate. The loss itself is pinned by closed-form cases
# below; this checks that the analytic gradient is the derivative of that
# loss. Frozen; run in float64 mode only.
def fd_grads(params, batch, config, step=1e-5):
    def eval_loss(weight, bias):
        p = ProbeParams(weight, bias)
        total = 0.0
        for sample in batch:
            out = forward(sample.features, p)
            total += masked_ce_loss(out, sample.labels,
                                    mode=config.normalization_mode,
                                    loss_head=config.loss_head)
        return total / len(batch)

    grad_w = np.zeros_like(params.weight)
    grad_b = np.zeros_like(params.bias)
    for idx in np.ndindex(params.weight.shape):
        for sign, bucket in ((1.0, 0), (-1.0, 1)):
            w = params.weight.copy()
            w[idx] += sign * step
            if bucket == 0:
                hi = eval_loss(w, params.bias)
            else:
                lo = eval_loss(w, params.bias)
        grad_w[idx] = (hi - lo) / (2 * step)
    for idx in np.ndindex(params.bias.shape):
        b = params.bias.copy()
        b[idx] += step
        hi = eval_loss(params.weight, b)
        b[idx] -= 2 * step
        lo = eval_loss(params.weight, b)
        grad_b[idx] = (hi - lo) / (2 * step)
    return grad_w, grad_b


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def random_sample(rng, grid_h, grid_w, dim, num_classes, image_h, image_w,
                  label_density=0.5):
    features = FeatureMap("t", rng.normal(size=(grid_h, grid_w, dim)), image_h, image_w)
    values = rng.integers(0, num_classes, size=(image_h, image_w)).astype(np.uint8)
    values[rng.random(size=values.shape) >= label_density] = 255
    return ImageSample(features, LabelMask(values, num_classes))


class TestForward:
    def test_zero_weight_broadcasts_bias(self):
        features = FeatureMap("a", np.random.default_rng(0).normal(size=(3, 3, 4)).astype(np.float32), 9, 9)
        bias = np.array([0.1, -0.2, 0.7], dtype=np.float32)
        out = forward(features, ProbeParams(np.zeros((4, 3), dtype=np.float32), bias))
        np.testing.assert_allclose(out.logits, np.broadcast_to(bias, (9, 9, 3)), atol=1e-6)
        assert np.all(out.argmax_map == 2)

    def test_1x1_grid_broadcasts_token(self):
        rng = np.random.default_rng(1)
        token = rng.normal(size=(1, 1, 5)).astype(np.float32)
        weight = rng.normal(size=(5, 3)).astype(np.float32)
        bias = rng.normal(size=3).astype(np.float32)
        out = forward(FeatureMap("a", token, 6, 7), ProbeParams(weight, bias))
        expected = token[0, 0] @ weight + bias
        np.testing.assert_allclose(out.logits, np.broadcast_to(expected, (6, 7, 3)), rtol=1e-5)

    def test_onehot_tokens_identity_head_recovers_classes(self):
        # tokens one-hot encode a class grid; an identity-extended weight
        # should make argmax agree with the grid on a pixel majority
        rng = np.random.default_rng(2)
        grid = rng.integers(0, 3, size=(8, 8))
        tokens = np.eye(3, 6, dtype=np.float32)[grid]
        out = forward(FeatureMap("a", tokens, 32, 32),
                      ProbeParams(np.eye(6, 3, dtype=np.float32), np.zeros(3, dtype=np.float32)))
        upsampled_grid = grid[np.repeat(np.arange(8), 4)][:, np.repeat(np.arange(8), 4)]
        agreement = (out.argmax_map == upsampled_grid).mean()
        assert agreement > 0.8

    def test_dim_mismatch(self):
        features = FeatureMap("a", np.zeros((2, 2, 4), dtype=np.float32), 4, 4)
        with pytest.raises(InvalidArgumentError):
            forward(features, ProbeParams.zeros(5, 3))

    def test_argmax_shift_invariance(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(5, 5, 4))
        out = probe.SegmentationOutput(logits)
        shifted = probe.SegmentationOutput(logits + 7.25)
        assert np.array_equal(out.argmax_map, shifted.argmax_map)


class TestMaskedCeLoss:
    def _single_pixel_case(self, mode):
        # 2 classes, zero logits: true-class softmax probability is 0.5
        logits = np.zeros((10, 10, 2))
        values = np.full((10, 10), 255, dtype=np.uint8)
        values[4, 7] = 0
        return probe.SegmentationOutput(logits), LabelMask(values, 2)

    def test_half_probability_is_ln2(self):
        out, labels = self._single_pixel_case("labeled-count")
        assert masked_ce_loss(out, labels, mode="labeled-count") == pytest.approx(np.log(2), abs=1e-12)

    def test_total_pixels_divides_by_hw(self):
        out, labels = self._single_pixel_case("total-pixels")
        assert masked_ce_loss(out, labels, mode="total-pixels") == pytest.approx(np.log(2) / 100, abs=1e-12)

    def test_sigmoid_head_at_zero_logit(self):
        out, labels = self._single_pixel_case("labeled-count")
        loss = masked_ce_loss(out, labels, mode="labeled-count", loss_head="per-class-sigmoid")
        assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_all_ignore_is_zero_with_warning(self):
        out = probe.SegmentationOutput(np.zeros((4, 4, 3)))
        labels = LabelMask(np.full((4, 4), 255, dtype=np.uint8), 3)
        with pytest.warns(EmptySupervisionWarning):
            assert masked_ce_loss(out, labels, mode="labeled-count") == 0.0
        assert masked_ce_loss(out, labels, mode="total-pixels") == 0.0

    def test_unlabeled_logits_do_not_matter(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(6, 6, 3))
        values = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
        values[rng.random(size=(6, 6)) < 0.5] = 255
        labels = LabelMask(values, 3)
        base = masked_ce_loss(probe.SegmentationOutput(logits), labels)
        perturbed = logits.copy()
        perturbed[values == 255] += rng.normal(scale=10, size=(int((values == 255).sum()), 3))
        assert masked_ce_loss(probe.SegmentationOutput(perturbed), labels) == pytest.approx(base, rel=1e-12)

    def test_label_perturbation_changes_loss(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(4, 4, 3))
        values = rng.integers(0, 3, size=(4, 4)).astype(np.uint8)
        labels = LabelMask(values, 3)
        base = masked_ce_loss(probe.SegmentationOutput(logits), labels)
        flipped = values.copy()
        flipped[0, 0] = (flipped[0, 0] + 1) % 3
        changed = masked_ce_loss(probe.SegmentationOutput(logits), LabelMask(flipped, 3))
        assert changed != pytest.approx(base, abs=1e-9)

    def test_shape_mismatch(self):
        out = probe.SegmentationOutput(np.zeros((4, 4, 3)))
        with pytest.raises(InvalidArgumentError):
            masked_ce_loss(out, LabelMask(np.zeros((5, 5), dtype=np.uint8), 3))


class TestLossAndGrad:
    def test_bias_gradient_closed_form_1x1_grid(self, f64):
        # zero params, one labeled pixel, 1x1 grid: the upsampling adjoint
        # collapses to a sum, so grad_bias is softmax(0) - onehot(y).
        num_classes = 4
        features = FeatureMap("a", np.zeros((1, 1, 6)), 5, 5)
        values = np.full((5, 5), 255, dtype=np.uint8)
        values[2, 2] = 1
        sample = ImageSample(features, LabelMask(values, num_classes))
        params = ProbeParams.zeros(6, num_classes)
        config = TrainConfig()
        _, _, grad_bias = loss_and_grad(params, [sample], config)
        expected = np.full(num_classes, 1 / num_classes)
        expected[1] -= 1.0
        np.testing.assert_allclose(grad_bias, expected, atol=1e-12)

    @pytest.mark.parametrize("loss_head", ["softmax", "per-class-sigmoid"])
    @pytest.mark.parametrize("mode", ["labeled-count", "total-pixels"])
    def test_matches_finite_differences(self, f64, loss_head, mode):
        rng = np.random.default_rng(17)
        sample = random_sample(rng, 2, 2, 8, 3, 7, 9)
        params = ProbeParams(rng.normal(size=(8, 3)), rng.normal(size=3))
        config = TrainConfig(normalization_mode=mode, loss_head=loss_head)
        loss, grad_w, grad_b = loss_and_grad(params, [sample], config)
        fd_w, fd_b = fd_grads(params, [sample], config)
        assert rel_err(grad_w, fd_w).max() < 1e-4
        assert rel_err(grad_b, fd_b).max() < 1e-4
        assert loss > 0

    def test_randomized_instances_match_fd(self, f64):
        rng = np.random.default_rng(99)
        for trial in range(4):
            grid_h, grid_w = rng.integers(1, 5, size=2)
            dim = int(rng.integers(2, 17))
            num_classes = int(rng.integers(2, 6))
            image_h, image_w = int(rng.integers(grid_h, 12)), int(rng.integers(grid_w, 12))
            batch = [random_sample(rng, grid_h, grid_w, dim, num_classes, image_h, image_w)
                     for _ in range(2)]
            params = ProbeParams(rng.normal(size=(dim, num_classes)),
                                 rng.normal(size=num_classes))
            config = TrainConfig()
            _, grad_w, grad_b = loss_and_grad(params, batch, config)
            fd_w, fd_b = fd_grads(params, batch, config)
            assert rel_err(grad_w, fd_w).max() < 1e-4, f"trial {trial}"
            assert rel_err(grad_b, fd_b).max() < 1e-4, f"trial {trial}"

    def test_zero_labeled_pixels_zero_gradients(self):
        features = FeatureMap("a", np.random.default_rng(0).normal(size=(2, 2, 4)).astype(np.float32), 4, 4)
        labels = LabelMask(np.full((4, 4), 255, dtype=np.uint8), 3)
        params = ProbeParams.zeros(4, 3)
        loss, grad_w, grad_b = loss_and_grad(params, [ImageSample(features, labels)], TrainConfig())
        assert loss == 0.0
        assert np.all(grad_w == 0)
        assert np.all(grad_b == 0)

    def test_empty_batch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            loss_and_grad(ProbeParams.zeros(4, 3), [], TrainConfig())


class TestAugment:
    def _sample(self, grid=8, patch=4):
        rng = np.random.default_rng(6)
        size = grid * patch
        features = FeatureMap("a", rng.normal(size=(grid, grid, 5)).astype(np.float32), size, size)
        values = rng.integers(0, 3, size=(size, size)).astype(np.uint8)
        return ImageSample(features, LabelMask(values, 3))

    def test_full_grid_crop_no_flip_is_identity(self):
        sample = self._sample()
        config = TrainConfig(crop_pixels=32, flip_prob=0.0)
        out = augment(sample, config, seed=0, patch_size=4)
        assert np.array_equal(out.features.values, sample.features.values)
        assert np.array_equal(out.labels.values, sample.labels.values)

    def test_flip_is_involution(self):
        sample = self._sample()
        config = TrainConfig(crop_pixels=32, flip_prob=1.0)
        once = augment(sample, config, seed=1, patch_size=4)
        twice = augment(once, config, seed=2, patch_size=4)
        assert np.array_equal(twice.features.values, sample.features.values)
        assert np.array_equal(twice.labels.values, sample.labels.values)

    def test_flip_preserves_class_histogram(self):
        sample = self._sample()
        config = TrainConfig(crop_pixels=32, flip_prob=1.0)
        out = augment(sample, config, seed=3, patch_size=4)
        assert np.array_equal(np.bincount(out.labels.values.ravel(), minlength=256),
                              np.bincount(sample.labels.values.ravel(), minlength=256))

    def test_crop_shapes_and_alignment(self):
        sample = self._sample(grid=8, patch=4)
        config = TrainConfig(crop_pixels=8, flip_prob=0.0)
        out = augment(sample, config, seed=4, patch_size=4)
        assert out.features.values.shape == (2, 2, 5)
        assert out.labels.values.shape == (8, 8)
        # cropped features are a contiguous window of the original grid
        found = False
        for r in range(7):
            for c in range(7):
                if np.array_equal(sample.features.values[r:r + 2, c:c + 2], out.features.values):
                    window = sample.labels.values[r * 4:(r + 2) * 4, c * 4:(c + 2) * 4]
                    found = np.array_equal(window, out.labels.values)
        assert found

    def test_oversized_crop_warns_and_skips(self):
        sample = self._sample(grid=4, patch=4)
        config = TrainConfig(crop_pixels=448, flip_prob=0.0)
        with pytest.warns(CropSkippedWarning):
            out = augment(sample, config, seed=5, patch_size=4)
        assert out.features.values.shape == sample.features.values.shape

    def test_deterministic(self):
        sample = self._sample()
        config = TrainConfig(crop_pixels=16, flip_prob=0.5)
        a = augment(sample, config, seed=7, patch_size=4)
        b = augment(sample, config, seed=7, patch_size=4)
        assert np.array_equal(a.features.values, b.features.values)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.learning_rate == 0.001
        assert config.iterations == 20000
        assert config.batch_size == 10
        assert config.momentum == 0.9
        assert config.weight_decay == 0.0
        assert config.crop_pixels == 448
        assert config.flip_prob == 0.5
        assert config.normalization_mode == "labeled-count"
        assert config.loss_head == "softmax"

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(learning_rate=0).validate()
        with pytest.raises(InvalidArgumentError):
            TrainConfig(iterations=0).validate()
        with pytest.raises(InvalidArgumentError):
            TrainConfig(normalization_mode="wat").validate()
        with pytest.raises(InvalidArgumentError):
            TrainConfig(crop_pixels=450).validate(patch_size=14)
        TrainConfig().validate(patch_size=14)


def quick_config(**overrides):
    base = dict(learning_rate=0.5, iterations=60, batch_size=6, crop_pixels=96,
                flip_prob=0.5, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrain:
    def test_separable_store_high_accuracy(self, tiny_store):
        config = quick_config(iterations=500, batch_size=10)
        params, history = train(tiny_store, tiny_store.image_ids(), config)
        correct = 0
        total = 0
        for image_id in tiny_store.image_ids():
            sample = tiny_store.load_sample(image_id)
            pred = forward(sample.features, params).argmax_map
            labeled = sample.labels.labeled
            correct += int((pred[labeled] == sample.labels.values[labeled]).sum())
            total += int(labeled.sum())
        assert correct / total > 0.99
        # smoothed loss must have dropped over training
        assert np.mean(history[450:500]) < np.mean(history[0:50])

    def test_tiny_lr_is_noop(self, tiny_store):
        config = quick_config(learning_rate=1e-30, iterations=20)
        params, history = train(tiny_store, tiny_store.image_ids(), config)
        assert np.allclose(params.weight, 0.0, atol=1e-20)
        assert history[0] == pytest.approx(history[-1], rel=1e-6)

    def test_deterministic_histories_and_params(self, tiny_store):
        config = quick_config(iterations=30)
        params_a, history_a = train(tiny_store, tiny_store.image_ids(), config)
        params_b, history_b = train(tiny_store, tiny_store.image_ids(), config)
        assert history_a == history_b
        assert params_a.weight.tobytes() == params_b.weight.tobytes()
        assert params_a.bias.tobytes() == params_b.bias.tobytes()

    def test_store_untouched_by_training(self, tiny_store):
        before = tiny_store.fingerprint()
        train(tiny_store, tiny_store.image_ids(), quick_config(iterations=10))
        assert tiny_store.fingerprint() == before

    def test_unlabeled_sample_named_before_training(self, tmp_path):
        store = build_synthetic_store(tmp_path / "s", num_images=2, grid_h=8, grid_w=8,
                                      num_classes=3, feature_dim=8, patch_size=4,
                                      seed=0, with_masks=False)
        with pytest.raises(InvalidArgumentError, match="synthetic-000"):
            train(store, store.image_ids(), quick_config(crop_pixels=32))

    def test_standardize_features_folds_back(self, tiny_store):
        config = quick_config(iterations=200, standardize_features=True)
        params, _ = train(tiny_store, tiny_store.image_ids(), config)
        sample = tiny_store.load_sample("synthetic-000")
        pred = forward(sample.features, params).argmax_map
        labeled = sample.labels.labeled
        accuracy = (pred[labeled] == sample.labels.values[labeled]).mean()
        assert accuracy > 0.95


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        params = ProbeParams(rng.normal(size=(6, 4)).astype(np.float32),
                             rng.normal(size=4).astype(np.float32))
        config = TrainConfig(iterations=123, seed=9)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, params, config, store_fingerprint="abc123")
        loaded, loaded_config, fingerprint = load_checkpoint(path)
        assert loaded.weight.tobytes() == params.weight.tobytes()
        assert loaded.bias.tobytes() == params.bias.tobytes()
        assert loaded_config == config
        assert fingerprint == "abc123"

    def test_rejects_foreign_json(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{}")
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(path)
