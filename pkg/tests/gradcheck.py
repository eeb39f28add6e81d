"""Central finite-difference oracle for gradient tests.

Kept independent of the autodiff engine: perturbs raw numpy buffers and
re-runs the forward function, never touching recorded tapes.
"""

from __future__ import annotations

import numpy as np


def finite_difference(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic, numeric, eps=1e-8):
    """Elementwise |analytic - numeric| / (|analytic| + eps), max over entries."""
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + eps)))


def assert_grads_close(f_np, build_loss, arrays, tol=1e-4, h=1e-5):
    """Check autodiff grads of build_loss against finite differences of f_np.

    f_np: pure-numpy scalar function of the raw arrays (the oracle side).
    build_loss: returns (loss_tensor, [input_tensors]) given the same arrays.
    """
    loss, tensors = build_loss(*[a.copy() for a in arrays])
    loss.backward()
    numeric = finite_difference(f_np, [a.copy() for a in arrays], h=h)
    for t, n in zip(tensors, numeric):
        assert t.grad is not None, "missing gradient"
        err = rel_err(t.grad, n)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
