import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def assert_grad_matches_fd(scalar_fn, x0, grad, tol=1e-4, h=1e-5, floor=1e-4,
                           min_consistent=0.8):
    """Check an analytic gradient against central finite differences.

    Piecewise-linear nets (ReLU) make some FD entries meaningless: when the
    stencil straddles a kink, the difference quotient matches neither of the
    one-sided derivatives. Entries where FD at h and h/2 disagree are treated
    as kink-corrupted and excluded, but at least ``min_consistent`` of all
    entries must survive the filter so it cannot mask a systematic error.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    num_h = central_diff(scalar_fn, x0.copy(), h=h)
    num_h2 = central_diff(scalar_fn, x0.copy(), h=h / 2)
    denom = np.maximum(np.maximum(np.abs(num_h), np.abs(num_h2)), floor)
    consistent = (np.abs(num_h - num_h2) / denom) < 10 * tol
    frac = consistent.mean() if consistent.size else 1.0
    assert frac >= min_consistent, f"only {frac:.0%} of FD entries are smooth"
    denom2 = np.maximum(np.maximum(np.abs(grad), np.abs(num_h2)), floor)
    err = np.abs(grad - num_h2) / denom2
    worst = float(err[consistent].max()) if consistent.any() else 0.0
    assert worst < tol, f"rel err {worst:.3g} on FD-consistent entries"
