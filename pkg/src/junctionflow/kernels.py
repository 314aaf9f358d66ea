"""Hot-loop kernels with a compiled core and a numpy fallback.

The flow stepping spends nearly all of its time applying the masked
zero-flux Laplacian and the explicit Euler update.  Both exist twice: a
Cython extension (built at install time) and a vectorized numpy version.
The extension is picked automatically when importable; set
JUNCTIONFLOW_FORCE_PYTHON=1 to force the numpy path.  benchmarks/
bench_kernels.py compares the two.

Conventions: vals and grad are C-contiguous (m, ncomp) float64 arrays;
nbrs is a (2*ndim, m) int64 table where a missing neighbor is replaced by
the node's own index (its second-difference contribution then cancels,
which realizes the mirror ghost to first order and keeps the operator
symmetric).
"""

import os

import numpy as np


def _np_laplacian(vals, nbrs, hinv2, out):
    acc = vals[nbrs[0]].copy()
    for a in range(1, nbrs.shape[0]):
        acc += vals[nbrs[a]]
    acc -= nbrs.shape[0] * vals
    np.multiply(acc, hinv2, out=out)
    return out


def _np_euler_step(vals, nbrs, hinv2, dt, grad, out):
    acc = vals[nbrs[0]].copy()
    for a in range(1, nbrs.shape[0]):
        acc += vals[nbrs[a]]
    acc -= nbrs.shape[0] * vals
    acc *= hinv2
    acc -= grad
    acc *= dt
    np.add(vals, acc, out=out)
    return out


BACKEND = "python"
_laplacian_impl = _np_laplacian
_euler_impl = _np_euler_step

if not os.environ.get("JUNCTIONFLOW_FORCE_PYTHON"):
    try:
        from . import _stepkern

        def _cy_laplacian(vals, nbrs, hinv2, out):
            _stepkern.laplacian(vals, nbrs, hinv2, out)
            return out

        def _cy_euler_step(vals, nbrs, hinv2, dt, grad, out):
            _stepkern.euler_step(vals, nbrs, hinv2, dt, grad, out)
            return out

        _laplacian_impl = _cy_laplacian
        _euler_impl = _cy_euler_step
        BACKEND = "compiled"
    except ImportError:
        pass


def laplacian(vals, nbrs, hinv2, out=None):
    """Masked zero-flux Laplacian via the neighbor table, times 1/h^2."""
    if out is None:
        out = np.empty_like(vals)
    return _laplacian_impl(vals, nbrs, hinv2, out)


def euler_step(vals, nbrs, hinv2, dt, grad, out=None):
    """Fused explicit update: vals + dt * (laplacian(vals) - grad)."""
    if out is None:
        out = np.empty_like(vals)
    return _euler_impl(vals, nbrs, hinv2, dt, grad, out)


def backends():
    """Mapping of backend name -> (laplacian, euler_step), for benchmarks."""
    table = {"python": (_np_laplacian, _np_euler_step)}
    if BACKEND == "compiled":
        table["compiled"] = (_laplacian_impl, _euler_impl)
    return table
