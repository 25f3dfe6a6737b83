"""Hot recursion kernels.

The batch AR(1) recursion is sequential in time, so it is written as an
explicit loop and compiled with numba.  A numpy implementation that
vectorises over trials instead is kept alongside; it is used when numba is
missing or when ``COVERTCTL_DISABLE_NUMBA`` is set to a truthy value.
Both produce the same floating-point operations in the same order.
"""
from __future__ import annotations

import os

import numpy as np

# controller codes understood by the kernels
KIND_NONE = 0
KIND_ONE_BIT = 1
KIND_THRESHOLD = 2
KIND_GAIN_CHANGE = 3


def _numba_disabled() -> bool:
    return os.environ.get("COVERTCTL_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


def run_batch_numpy(noises, x0, a, kind, a_ctrl, p1, p2, reset_at, first_control):
    """Run ``T`` trajectories of ``x_k = a x_{k-1} - u_k + z_k`` in lockstep.

    ``reset_at[t] >= 0`` forces ``u = a x`` at step ``reset_at[t] + 1`` of
    trial ``t``, which makes that state equal to its noise sample exactly.
    ``first_control`` applies the feedback law already at step 1 (using
    ``x0``); otherwise ``u_1 = 0``.
    """
    n_trials, horizon = noises.shape
    states = np.empty((n_trials, horizon))
    controls = np.zeros((n_trials, horizon))
    x = x0.astype(np.float64).copy()
    c = np.full(n_trials, p1)
    half = a_ctrl / 2.0
    for j in range(horizon):
        k = j + 1
        if kind == KIND_ONE_BIT:
            if k == 1:
                u = np.zeros(n_trials)
            else:
                u = half * c * np.where(x >= 0.0, 1.0, -1.0)
                c = half * c + p2
        elif k == 1 and not first_control:
            u = np.zeros(n_trials)
        elif kind == KIND_THRESHOLD:
            u = np.where(np.abs(x) >= p1, a_ctrl * x, 0.0)
        elif kind == KIND_GAIN_CHANGE:
            u = (a_ctrl - p1) * x
        else:
            u = np.zeros(n_trials)
        forced = reset_at == j
        if forced.any():
            u = np.where(forced, a * x, u)
        x = a * x - u + noises[:, j]
        states[:, j] = x
        controls[:, j] = u
    return states, controls


try:  # pragma: no cover - exercised implicitly through whichever backend loads
    import numba

    @numba.njit(cache=True, nogil=True)
    def run_batch_numba(noises, x0, a, kind, a_ctrl, p1, p2, reset_at, first_control):
        n_trials, horizon = noises.shape
        states = np.empty((n_trials, horizon))
        controls = np.zeros((n_trials, horizon))
        half = a_ctrl / 2.0
        for t in range(n_trials):
            x = x0[t]
            c = p1
            for j in range(horizon):
                k = j + 1
                u = 0.0
                if kind == KIND_ONE_BIT:
                    if k > 1:
                        s = 1.0 if x >= 0.0 else -1.0
                        u = half * c * s
                        c = half * c + p2
                elif k == 1 and not first_control:
                    u = 0.0
                elif kind == KIND_THRESHOLD:
                    if abs(x) >= p1:
                        u = a_ctrl * x
                elif kind == KIND_GAIN_CHANGE:
                    u = (a_ctrl - p1) * x
                if reset_at[t] == j:
                    u = a * x
                x = a * x - u + noises[t, j]
                states[t, j] = x
                controls[t, j] = u
        return states, controls

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    run_batch_numba = None
    HAVE_NUMBA = False


def backend() -> str:
    """Name of the backend :func:`run_batch` dispatches to right now."""
    if HAVE_NUMBA and not _numba_disabled():
        return "numba"
    return "numpy"


def run_batch(noises, x0, a, kind, a_ctrl=0.0, p1=0.0, p2=0.0, reset_at=None, first_control=False):
    noises = np.ascontiguousarray(noises, dtype=np.float64)
    if noises.ndim != 2:
        raise ValueError("noises must be a 2-D (trials, horizon) array")
    x0 = np.ascontiguousarray(np.broadcast_to(np.asarray(x0, dtype=np.float64), noises.shape[:1]))
    if reset_at is None:
        reset_at = np.full(noises.shape[0], -1, dtype=np.int64)
    reset_at = np.ascontiguousarray(reset_at, dtype=np.int64)
    args = (noises, x0, float(a), int(kind), float(a_ctrl), float(p1), float(p2), reset_at, bool(first_control))
    if backend() == "numba":
        return run_batch_numba(*args)
    return run_batch_numpy(*args)
