"""Finite-difference oracles shared by the test modules."""

import numpy as np

from graphtrans.tensor import Tape, Tensor, backward, no_grad, precision


def rel_error(a, b):
    """Largest absolute difference scaled by the largest magnitude on either side."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def numeric_grad(f, x, h=1e-3, coords=None):
    """Central differences of scalar ``f`` at float64 array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def gradcheck(fn, arrays, rng, h=1e-3, max_coords=None):
    """Analytic vs central-difference gradient of ``sum(fn(*inputs) * R)``.

    Runs in float64.  Returns the worst relative error over all inputs
    (restricted to ``max_coords`` random coordinates per input when given).
    """
    with precision(np.float64):
        ts = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        with Tape():
            out = fn(*ts)
            proj = Tensor(rng.standard_normal(out.shape))
            loss = (out * proj).sum()
            backward(loss)

        def value():
            with no_grad():
                return float((fn(*ts).data * proj.data).sum())

        worst = 0.0
        for t in ts:
            coords = None
            if max_coords is not None and t.size > max_coords:
                coords = rng.choice(t.size, size=max_coords, replace=False)
            num = numeric_grad(value, t.data, h, coords)
            ana = t.grad.reshape(-1)
            if coords is not None:
                worst = max(worst, rel_error(ana[coords], num.reshape(-1)[coords]))
            else:
                worst = max(worst, rel_error(ana, num.reshape(-1)))
        return worst


def param_gradcheck(build_loss, params, rng, h=1e-3, coords_per_param=3):
    """Check gradients of float64 parameters (Tensors already requiring grad)."""
    for p in params:
        p.grad = None
    with Tape():
        loss = build_loss()
        backward(loss)

    def value():
        with no_grad():
            return float(build_loss().data)

    ana, num = [], []
    for p in params:
        k = min(coords_per_param, p.size)
        coords = rng.choice(p.size, size=k, replace=False)
        ana.append(p.grad.reshape(-1)[coords])
        num.append(numeric_grad(value, p.data, h, coords).reshape(-1)[coords])
    # one scale across all sampled coordinates
    return rel_error(np.concatenate(ana), np.concatenate(num))
