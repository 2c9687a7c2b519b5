import numpy as np
import pytest

from sganvo import gradcheck
from sganvo.tensor import ops


@pytest.fixture(scope="module")
def results():
    return gradcheck.run_all()


def test_every_check_passes(results):
    bad = [r.line() for r in results if not r.passed]
    assert not bad, "\n".join(bad)
    assert gradcheck.summarize(results).startswith(f"{len(results)}/{len(results)} checks passed")


def test_coverage(results):
    names = {r.name for r in results}
    for required in ("conv2d", "bilinear_sample", "warp_image", "reproject", "pose_to_transform",
                     "gradient_penalty_linear", "convlstm_step", "critic_forward"):
        assert required in names
    assert {r.module for r in results} == {"tensor", "geometry", "layers", "losses"}
    geo = [r for r in results if r.module == "geometry"]
    assert all(r.tol == gradcheck.GEOMETRY_TOL for r in geo)


def test_injected_fault_is_reported(monkeypatch):
    real = ops.col2im
    monkeypatch.setattr(ops, "col2im", lambda *a, **k: ops.mul(real(*a, **k), 1.01))
    res = gradcheck.run_all("conv2d")
    assert not res[0].passed
    assert "FAIL tensor.conv2d" in res[0].line()
    assert "FAILED: tensor.conv2d" in gradcheck.summarize(res)


def test_crash_counts_as_failure(monkeypatch):
    def broken(rng):
        raise RuntimeError("boom")

    monkeypatch.setitem(gradcheck.REGISTRY, "broken", gradcheck.Check("broken", "tensor", broken))
    (res,) = gradcheck.run_all("broken")
    assert not res.passed and "boom" in res.line()


def test_unknown_scope():
    with pytest.raises(ValueError, match="unknown gradcheck scope"):
        gradcheck.select("nope")


def test_relative_error_of_zero_gradients():
    assert gradcheck.relative_error(np.zeros(3), np.zeros(3)) == 0.0
