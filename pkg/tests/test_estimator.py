import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sganvo import SGANVOEstimator
from sganvo.data import SynthSceneSpec, generate_synth, sliding_windows
from sganvo.validation import check_image_batch, check_intrinsics, check_windows

TINY = dict(n_layers=0, window=2, iterations=2, n_critic=1, lambda_l=(1.0,))


@pytest.fixture(scope="module")
def windows():
    scene = generate_synth(SynthSceneSpec(n_frames=3, ramp=0.3))
    return sliding_windows(scene.frames, 2)


@pytest.fixture(scope="module")
def fitted(windows):
    return SGANVOEstimator(**TINY).fit(windows)


def test_params_and_clone():
    est = SGANVOEstimator(**TINY)
    assert est.get_params()["window"] == 2
    twin = clone(est).set_params(random_state=4)
    assert twin.random_state == 4 and est.random_state == 0


def test_fit_and_predict_shapes(fitted, windows):
    assert fitted.n_iter_ == 2 and len(fitted.history_) == 2
    assert fitted.predict(windows).shape == (2, 2, 6)
    depth = fitted.predict_depth(windows)
    assert depth.shape == (2, 2, 32, 64) and np.all(depth >= 0.1 - 1e-12)
    assert fitted.score(windows) <= 0.0


def test_array_input(fitted, windows):
    X = np.stack([np.stack([f.left for f in w.frames]) for w in windows])
    k = windows[0].intrinsics
    K = np.array([[k.fx, 0, k.cx], [0, k.fy, k.cy], [0, 0, 1]])
    # arrays carry no right view, so only the first-step pose (self pair) is compared
    a = fitted.predict(X, K)
    assert a.shape == (2, 2, 6) and np.all(np.isfinite(a))


def test_fit_is_deterministic(windows, fitted):
    again = SGANVOEstimator(**TINY).fit(windows)
    np.testing.assert_array_equal(again.predict(windows), fitted.predict(windows))


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        SGANVOEstimator().predict(np.zeros((1, 3, 3, 32, 64)), np.eye(3))


def test_bad_hyperparameters(windows):
    with pytest.raises(ValueError, match="iterations must be > 0"):
        SGANVOEstimator(iterations=0).fit(windows)
    with pytest.raises(ValueError, match="divisible by 16"):
        SGANVOEstimator(height=30, window=2).fit(windows)


def test_input_validation(windows):
    with pytest.raises(ValueError, match=r"\[n, N, 3, H, W\]"):
        check_image_batch(np.zeros((2, 3, 32, 64)))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        check_image_batch(np.full((1, 2, 3, 4, 4), 2.0))
    with pytest.raises(ValueError, match="NaN"):
        check_image_batch(np.full((1, 2, 3, 4, 4), np.nan))
    with pytest.raises(ValueError, match="needs intrinsics"):
        check_windows(np.zeros((1, 2, 3, 4, 4)))
    with pytest.raises(ValueError, match="model expects 3"):
        check_windows(windows, window=3)
    with pytest.raises(ValueError, match="3x3"):
        check_intrinsics(np.eye(2), 4, 4)
    with pytest.raises(ValueError, match="pose targets"):
        SGANVOEstimator(**TINY).fit(windows, y=np.zeros((2, 2, 4, 4)))
