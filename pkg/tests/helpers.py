"""Shared finite-difference utilities for the test suite."""

import numpy as np

from lrfpn import kernels as K
from lrfpn.tensor import Tape, Tensor, backward


def fd_grad(objective, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar objective wrt every entry of arr."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        fp = objective()
        arr[idx] = orig - eps
        fm = objective()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def check_grads(make_out, wrt, seed=0, atol=1e-7):
    """Backward through mean(out * R) and compare each wrt grad to FD."""
    out0 = make_out()
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(out0.shape)

    with Tape() as tape:
        out = make_out()
        loss = K.mean_all(K.hadamard(out, Tensor(r)))
        backward(tape, loss)

    def objective():
        return float((make_out().value * r).mean())

    for t in wrt:
        fd = fd_grad(objective, t.value)
        np.testing.assert_allclose(t.grad, fd, rtol=1e-5, atol=atol)
