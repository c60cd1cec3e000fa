import numpy as np
import pytest

from graphseqrec import autodiff as ad


def numeric_grad(loss_value, arr, h=1e-5):
    """Central finite differences of a scalar closure w.r.t. an array,
    perturbing the array in place."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_value()
        flat[i] = orig - h
        fm = loss_value()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(analytic, numeric):
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def check_grads(make_loss, tensors, rtol=1e-4, h=1e-5):
    """Analytic gradients of make_loss() vs central differences.

    ``tensors`` maps names to leaf Tensors whose .data the closure reads.
    """
    for t in tensors.values():
        t.grad = None
    loss = make_loss()
    ad.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}
    for name, t in tensors.items():
        numeric = numeric_grad(lambda: float(make_loss().data), t.data, h)
        err = rel_err(analytic[name], numeric)
        assert err < rtol, f"gradient mismatch for {name}: rel err {err:.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
