"""Convolution kernels for the toy network and the blur layer.

Kernels work on channel-first rasters: activations ``(C, H, W)`` and weights
``(cout, cin, kh, kw)``, float64.  ``conv_valid`` is an unpadded
cross-correlation; callers pad first.

Each kernel has a numba body and a numpy body.  The numba path is used when
numba imports and ``SEGCONSIST_DISABLE_NUMBA`` is unset; ``backend=`` forces
either one (the tests and ``benchmarks/bench_kernels.py`` use that).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _accel
from ._accel import njit


# -- numba bodies -------------------------------------------------------------
# Image rows are the outer loop so one output row (and the few input rows it
# reads) stays in cache while every tap is applied; the innermost loop runs
# along columns so LLVM can vectorize it.

@njit(cache=True, fastmath=True)
def _conv_valid_nb(xp, w):
    cout, cin, kh, kw = w.shape
    H = xp.shape[1] - kh + 1
    W = xp.shape[2] - kw + 1
    out = np.zeros((cout, H, W))
    for i in range(H):
        for co in range(cout):
            orow = out[co, i]
            for ci in range(cin):
                for di in range(kh):
                    xr = xp[ci, i + di]
                    for dj in range(kw):
                        c = w[co, ci, di, dj]
                        for j in range(W):
                            orow[j] += c * xr[j + dj]
    return out


@njit(cache=True, fastmath=True)
def _conv_input_grad_nb(gout, w):
    cout, cin, kh, kw = w.shape
    H, W = gout.shape[1], gout.shape[2]
    gx = np.zeros((cin, H + kh - 1, W + kw - 1))
    for i in range(H):
        for ci in range(cin):
            for di in range(kh):
                xrow = gx[ci, i + di]
                for co in range(cout):
                    grow = gout[co, i]
                    for dj in range(kw):
                        c = w[co, ci, di, dj]
                        for j in range(W):
                            xrow[j + dj] += c * grow[j]
    return gx


@njit(cache=True, fastmath=True)
def _conv_weight_grad_nb(xp, gout, kh, kw):
    cout, H, W = gout.shape
    cin = xp.shape[0]
    gw = np.zeros((cout, cin, kh, kw))
    for i in range(H):
        for co in range(cout):
            grow = gout[co, i]
            for ci in range(cin):
                for di in range(kh):
                    xr = xp[ci, i + di]
                    for dj in range(kw):
                        s = 0.0
                        for j in range(W):
                            s += grow[j] * xr[j + dj]
                        gw[co, ci, di, dj] += s
    return gw


# -- numpy bodies -------------------------------------------------------------

def _conv_valid_np(xp, w):
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (cin, H, W, kh, kw)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def _conv_input_grad_np(gout, w):
    kh, kw = w.shape[2:]
    gpad = np.pad(gout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    return _conv_valid_np(gpad, w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def _conv_weight_grad_np(xp, gout, kh, kw):
    cout, H, W = gout.shape
    cin = xp.shape[0]
    gw = np.empty((cout, cin, kh, kw))
    g2 = gout.reshape(cout, -1)
    for di in range(kh):
        for dj in range(kw):
            gw[:, :, di, dj] = g2 @ xp[:, di:di + H, dj:dj + W].reshape(cin, -1).T
    return gw


# -- public entry points ------------------------------------------------------

def backend_name(backend=None):
    if backend is None:
        return "numba" if _accel.USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def conv_valid(xp, w, backend=None):
    """Valid cross-correlation of ``xp`` (cin, Hp, Wp) with ``w`` (cout, cin, k, k)."""
    if backend_name(backend) == "numba":
        return _conv_valid_nb(np.ascontiguousarray(xp), np.ascontiguousarray(w))
    return _conv_valid_np(xp, w)


def conv_input_grad(gout, w, backend=None):
    """Adjoint of :func:`conv_valid` with respect to the padded input."""
    if backend_name(backend) == "numba":
        return _conv_input_grad_nb(np.ascontiguousarray(gout), np.ascontiguousarray(w))
    return _conv_input_grad_np(gout, w)


def conv_weight_grad(xp, gout, kh, kw, backend=None):
    """Gradient of :func:`conv_valid` with respect to the kernel."""
    if backend_name(backend) == "numba":
        return _conv_weight_grad_nb(np.ascontiguousarray(xp), np.ascontiguousarray(gout), kh, kw)
    return _conv_weight_grad_np(xp, gout, kh, kw)


def reflect_pad(x, p):
    """Reflect-pad the two trailing (spatial) axes of a channel-first raster."""
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)), mode="reflect")


def _fold_last(g, p, n):
    core = g[..., p:p + n].copy()
    core[..., 1:p + 1] += g[..., :p][..., ::-1]
    core[..., n - 1 - p:n - 1] += g[..., n + p:][..., ::-1]
    return core


def reflect_pad_grad(gpad, p):
    """Adjoint of :func:`reflect_pad`: fold border gradients back onto their source pixels."""
    if p == 0:
        return gpad.copy()
    H = gpad.shape[1] - 2 * p
    W = gpad.shape[2] - 2 * p
    g = _fold_last(gpad, p, W)
    g = _fold_last(g.swapaxes(1, 2), p, H).swapaxes(1, 2)
    return np.ascontiguousarray(g)
