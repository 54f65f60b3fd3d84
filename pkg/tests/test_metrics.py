import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colabel.core import ShapeError, VideoVolume
from colabel.metrics import (
    class_average_accuracy,
    confusion_matrix,
    evaluate,
    global_accuracy,
    mean_iou,
    synthesize_scene,
    temporal_stability,
)

# unary-argmax accuracy of the seed-0 scene, frozen from the first run
SYNTH_UNARY_ACCURACY = 0.572412109375


def label_maps(max_labels=5):
    return st.integers(2, max_labels).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=60),
        )
    )


class TestGlobalAccuracy:
    def test_identity(self):
        gt = np.array([[0, 1], [2, 1]])
        assert global_accuracy(gt, gt) == 1.0

    def test_half(self):
        assert global_accuracy([0, 1, 1, 0], [0, 1, 0, 1]) == 0.5

    def test_ignore(self):
        assert global_accuracy([0, 1, 1], [0, 2, 2], ignore_label=2) == 1.0

    def test_all_ignored(self):
        with pytest.raises(ValueError, match="empty evaluation set"):
            global_accuracy([0, 0], [3, 3], ignore_label=3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            global_accuracy(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(label_maps(), st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, data, rnd):
        n, pairs = data
        pred, gt = np.array(pairs).T
        perm = np.array(rnd.sample(range(n), n))
        assert global_accuracy(perm[pred], perm[gt]) == global_accuracy(pred, gt)


class TestClassAverageAccuracy:
    def test_enumerated_example(self):
        assert class_average_accuracy([0, 1, 1, 1], [0, 0, 1, 1], 2) == 0.75

    def test_absent_class_excluded(self):
        assert class_average_accuracy([0, 0, 1], [0, 0, 1], 5) == 1.0

    def test_confusion_rows_are_truth(self):
        cm = confusion_matrix([0, 1, 1, 1], [0, 0, 1, 1], 2)
        np.testing.assert_array_equal(cm, [[1, 1], [0, 2]])

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            confusion_matrix([0, 4], [0, 1], 3)


class TestMeanIoU:
    def test_enumerated_example(self):
        assert mean_iou([0, 0, 1, 1], [0, 1, 1, 1], 2) == pytest.approx(7 / 12, abs=1e-15)

    def test_disjoint(self):
        assert mean_iou([1, 1], [0, 0], 2) == 0.0

    def test_identity(self):
        gt = np.array([0, 2, 2, 1])
        assert mean_iou(gt, gt, 4) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(label_maps())
    def test_bounded(self, data):
        n, pairs = data
        pred, gt = np.array(pairs).T
        for value in (
            global_accuracy(pred, gt),
            class_average_accuracy(pred, gt, n),
            mean_iou(pred, gt, n),
        ):
            assert 0.0 <= value <= 1.0


class TestTemporalStability:
    def static_video(self, t=2, h=10, w=10):
        return VideoVolume(np.full((t, h, w, 3), 90, dtype=np.uint8))

    def test_constant(self):
        assert temporal_stability(np.zeros((3, 10, 10), int), self.static_video(3)) == 1.0

    def test_flip_everywhere(self):
        pred = (np.arange(4)[:, None, None] % 2) * np.ones((4, 10, 10), int)
        assert temporal_stability(pred, self.static_video(4)) == 0.0

    def test_ten_percent_flip(self):
        pred = np.zeros((2, 10, 10), int)
        pred[1, 0, :] = 1
        assert temporal_stability(pred, self.static_video()) == pytest.approx(0.9, abs=1e-15)

    def test_moving_pixels_skipped(self):
        frames = np.full((2, 4, 4, 3), 90, dtype=np.uint8)
        frames[1, 0, 0] = 200
        pred = np.zeros((2, 4, 4), int)
        pred[1, 0, 0] = 1
        assert temporal_stability(pred, VideoVolume(frames)) == 1.0

    def test_single_frame(self):
        with pytest.raises(ValueError, match="at least 2"):
            temporal_stability(np.zeros((1, 4, 4), int), self.static_video(1, 4, 4))

    def test_no_static_pixels(self):
        frames = np.zeros((2, 2, 2, 3), dtype=np.uint8)
        frames[1] = 255
        with pytest.raises(ValueError, match="colour-static"):
            temporal_stability(np.zeros((2, 2, 2), int), VideoVolume(frames))

    def test_evaluate_report(self):
        pred = np.zeros((2, 10, 10), int)
        report = evaluate(pred, pred, 2, video=self.static_video())
        assert report == {
            "global_accuracy": 1.0,
            "class_average_accuracy": 1.0,
            "mean_iou": 1.0,
            "temporal_stability": 1.0,
        }


class TestSynthesizeScene:
    def test_deterministic(self):
        a = synthesize_scene(3, 3, 20, 24, 3, 0.4)
        b = synthesize_scene(3, 3, 20, 24, 3, 0.4)
        np.testing.assert_array_equal(a[0].frames, b[0].frames)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[2], b[2])

    def test_shapes(self):
        video, gt, unary = synthesize_scene(0, 4, 16, 20, 5, 0.5)
        assert video.shape == (4, 16, 20)
        assert gt.shape == (4, 16, 20)
        assert unary.shape == (4, 16, 20, 5)
        assert gt.min() >= 0 and gt.max() < 5

    def test_noise_free_reproduces_truth(self):
        _, gt, unary = synthesize_scene(1, 3, 32, 32, 4, 0.0)
        np.testing.assert_array_equal(unary.argmin(-1), gt)

    def test_accuracy_falls_with_noise(self):
        acc = []
        for eta in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            _, gt, unary = synthesize_scene(0, 2, 32, 32, 4, eta)
            acc.append(global_accuracy(unary.argmin(-1), gt))
        assert all(a > b for a, b in zip(acc, acc[1:]))

    def test_frozen_baseline(self):
        _, gt, unary = synthesize_scene(0, 10, 64, 64, 4, 0.5)
        assert global_accuracy(unary.argmin(-1), gt) == pytest.approx(SYNTH_UNARY_ACCURACY, abs=1e-12)

    def test_rectangles_move(self):
        _, gt, _ = synthesize_scene(0, 5, 48, 48, 4, 0.0)
        assert not np.array_equal(gt[0], gt[-1])

    @pytest.mark.parametrize("args", [(0, 0, 8, 8, 3, 0.1), (0, 2, 8, 8, 1, 0.1), (0, 2, 8, 8, 3, 1.5)])
    def test_rejects_degenerate(self, args):
        with pytest.raises(ValueError):
            synthesize_scene(*args)
