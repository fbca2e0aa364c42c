import numpy as np
import pytest

from pccforge import autodiff as ad


@pytest.fixture(autouse=True)
def fresh_graph():
    ad.reset_graph()
    yield
    ad.reset_graph()


def numerical_grad(f, arrays, h=1e-5):
    """Central finite differences of the scalar function f.

    f takes no arguments and must re-read the buffers in `arrays`, which are
    perturbed in place one entry at a time. Returns one gradient array per
    input buffer. This is the independent oracle for every analytic
    backward pass in the suite.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic, fd):
    """Max absolute deviation scaled by the oracle's magnitude."""
    denom = max(float(np.max(np.abs(fd))), 1e-6)
    return float(np.max(np.abs(np.asarray(analytic) - np.asarray(fd)))) / denom


def grad_check(build_loss, leaves, h=1e-5):
    """Run analytic backward and the FD oracle; return the worst rel_err.

    build_loss() must construct the loss tensor from the leaf tensors'
    current .data buffers. `leaves` are the Tensors whose gradients are
    compared.
    """
    ad.reset_graph()
    loss = build_loss()
    ad.backward(loss)
    analytic = [lf.grad.copy() if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]
    for lf in leaves:
        lf.zero_grad()

    def f():
        ad.reset_graph()
        return build_loss().item()

    fd = numerical_grad(f, [lf.data for lf in leaves], h=h)
    return max(rel_err(a, b) for a, b in zip(analytic, fd))
