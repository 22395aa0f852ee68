import pytest

from spikecloud.gradcheck import fused_vs_reference, run_gradcheck, surrogate_fd_error


def test_surrogate_fd():
    assert surrogate_fd_error() < 1e-6


def test_fused_matches_reference():
    assert fused_vs_reference() < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_passes(seed):
    rep = run_gradcheck(seed=seed)
    assert rep.max_rel_error < 1e-4
    assert rep.passed()
    assert any(k.startswith("pinned") for k in rep.rel_errors)
    assert any(k.startswith("smooth") for k in rep.rel_errors)
    assert rep.lines()[-1].startswith("max relative gradient error")
