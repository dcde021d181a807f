"""Shared numerical oracles for the test-suite."""
import numpy as np

from exforge.nn import Network


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def network_gradcheck(net: Network, x, upstream, h=1e-6):
    """Max relative error of backprop vs central differences over params and input."""
    def scalar(params_override=None, x_override=None):
        return float(np.sum(upstream * net(x if x_override is None else x_override)))

    _, cache = net.forward(x)
    grads, gx = net.backward(cache, upstream)
    errs = []
    for p, g in zip(net.params, grads):
        def f(val, p=p):
            saved = p.copy()
            p[...] = val
            out = scalar()
            p[...] = saved
            return out
        errs.append(rel_err(g, central_diff(f, p.copy(), h)))
    errs.append(rel_err(gx, central_diff(lambda v: scalar(x_override=v), x, h)))
    return max(errs)
