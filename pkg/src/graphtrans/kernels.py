"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel works on 2-D row blocks (rows x features).  The numba versions
accumulate in float64 and write back in the input dtype; the numpy versions
are plain vectorized expressions.  Set ``GT_NUMBA=0`` to force the numpy
path (read once at import).
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _env_wants_numba():
    flag = os.environ.get("GT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


class numpy_impl:
    @staticmethod
    def softmax_fwd(x):
        z = x - x.max(axis=1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=1, keepdims=True)
        return z

    @staticmethod
    def softmax_bwd(y, g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    @staticmethod
    def layernorm_fwd(x, gamma, beta, eps):
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * rstd
        return xhat * gamma + beta, xhat, rstd[:, 0]

    @staticmethod
    def layernorm_bwd(g, xhat, rstd, gamma):
        gg = g * gamma
        m1 = gg.mean(axis=1, keepdims=True)
        m2 = (gg * xhat).mean(axis=1, keepdims=True)
        dx = (gg - m1 - xhat * m2) * rstd[:, None]
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        return dx, dgamma, dbeta

    @staticmethod
    def xent_fwd(logits, targets, weights, smoothing):
        """Per-row loss and probabilities.  ``weights`` is 0 on padded rows."""
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(logits.shape[0])
        nll = lse - z[rows, targets]
        if smoothing > 0.0:
            uniform = lse - z.mean(axis=1)
            nll = (1.0 - smoothing) * nll + smoothing * uniform
        probs = np.exp(z - lse[:, None])
        return nll * weights, probs

    @staticmethod
    def xent_bwd(probs, targets, weights, smoothing, scale):
        d = probs.copy()
        rows = np.arange(probs.shape[0])
        d[rows, targets] -= 1.0 - smoothing
        if smoothing > 0.0:
            d -= smoothing / probs.shape[1]
        d *= (weights * scale)[:, None]
        return d

    @staticmethod
    def scatter_rows(ids, g, n_rows):
        out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
        np.add.at(out, ids, g)
        return out

    @staticmethod
    def adam_update(p, g, m, v, lr, b1, b2, eps, step):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1**step)
        vhat = v / (1.0 - b2**step)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _softmax_fwd_nb(x):
        n, k = x.shape
        out = np.empty_like(x)
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, k):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(k):
                e = np.exp(np.float64(x[i, j]) - mx)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(k):
                out[i, j] = out[i, j] * inv
        return out

    @njit(cache=True)
    def _softmax_bwd_nb(y, g):
        n, k = y.shape
        out = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(k):
                dot += np.float64(g[i, j]) * y[i, j]
            for j in range(k):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def _layernorm_fwd_nb(x, gamma, beta, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, rstd

    @njit(cache=True)
    def _layernorm_bwd_nb(g, xhat, rstd, gamma):
        n, d = g.shape
        dx = np.empty_like(g)
        dgamma = np.zeros(d, dtype=np.float64)
        dbeta = np.zeros(d, dtype=np.float64)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gg = np.float64(g[i, j]) * gamma[j]
                m1 += gg
                m2 += gg * xhat[i, j]
                dgamma[j] += np.float64(g[i, j]) * xhat[i, j]
                dbeta[j] += g[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                gg = np.float64(g[i, j]) * gamma[j]
                dx[i, j] = (gg - m1 - xhat[i, j] * m2) * rstd[i]
        return dx, dgamma.astype(g.dtype), dbeta.astype(g.dtype)

    @njit(cache=True)
    def _xent_fwd_nb(logits, targets, weights, smoothing):
        n, k = logits.shape
        probs = np.empty_like(logits)
        loss = np.empty(n, dtype=logits.dtype)
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, k):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            zsum = 0.0
            for j in range(k):
                z = np.float64(logits[i, j]) - mx
                zsum += z
                s += np.exp(z)
            lse = np.log(s)
            for j in range(k):
                probs[i, j] = np.exp(np.float64(logits[i, j]) - mx - lse)
            nll = lse - (np.float64(logits[i, targets[i]]) - mx)
            if smoothing > 0.0:
                nll = (1.0 - smoothing) * nll + smoothing * (lse - zsum / k)
            loss[i] = nll * weights[i]
        return loss, probs

    @njit(cache=True)
    def _xent_bwd_nb(probs, targets, weights, smoothing, scale):
        n, k = probs.shape
        d = np.empty_like(probs)
        off = smoothing / k
        for i in range(n):
            w = weights[i] * scale
            for j in range(k):
                d[i, j] = (probs[i, j] - off) * w
            d[i, targets[i]] -= (1.0 - smoothing) * w
        return d

    @njit(cache=True)
    def _scatter_rows_nb(ids, g, n_rows):
        out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
        for i in range(ids.shape[0]):
            r = ids[i]
            for j in range(g.shape[1]):
                out[r, j] += g[i, j]
        return out

    @njit(cache=True)
    def _adam_update_nb(p, g, m, v, lr, b1, b2, eps, step):
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        for i in range(p.size):
            gi = np.float64(g[i])
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    class numba_impl:
        softmax_fwd = staticmethod(_softmax_fwd_nb)
        softmax_bwd = staticmethod(_softmax_bwd_nb)

        @staticmethod
        def layernorm_fwd(x, gamma, beta, eps):
            return _layernorm_fwd_nb(x, gamma, beta, float(eps))

        layernorm_bwd = staticmethod(_layernorm_bwd_nb)

        @staticmethod
        def xent_fwd(logits, targets, weights, smoothing):
            return _xent_fwd_nb(logits, targets.astype(np.int64), weights, float(smoothing))

        @staticmethod
        def xent_bwd(probs, targets, weights, smoothing, scale):
            return _xent_bwd_nb(probs, targets.astype(np.int64), weights, float(smoothing), float(scale))

        @staticmethod
        def scatter_rows(ids, g, n_rows):
            return _scatter_rows_nb(ids.astype(np.int64), np.ascontiguousarray(g), n_rows)

        @staticmethod
        def adam_update(p, g, m, v, lr, b1, b2, eps, step):
            # flat views; all buffers are C-contiguous by construction
            _adam_update_nb(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                            float(lr), float(b1), float(b2), float(eps), int(step))

else:  # pragma: no cover
    numba_impl = numpy_impl


def backend():
    """The kernel namespace currently in use."""
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
