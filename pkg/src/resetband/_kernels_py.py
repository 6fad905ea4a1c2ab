"""Pure-Python simulation kernels (fallback for ``_kernels``).

Both implementations follow the same per-sample order and must agree to
round-off; see ``tests/test_kernels.py``.
"""

import numpy as np

BACKEND = "python"


def _crossed(prev, cur):
    return cur * prev < 0.0 or (cur == 0.0 and prev != 0.0)


def open_loop(Phi, G0, G1, C, D, rho, u, trig):
    """Advance ``x[k+1] = Phi x + G0 u[k] + G1 u[k+1]`` with resets.

    ``u`` has one more sample than the output (the look-ahead for the hold);
    for zero-order hold pass ``G1 = 0``.  The state is multiplied by ``rho``
    at sample ``k`` when ``trig`` changed sign between ``k-1`` and ``k``;
    ``y_left`` holds the output just before any reset at each sample.
    """
    n = Phi.shape[0]
    N = trig.shape[0]
    x = np.zeros(n)
    y = np.empty(N)
    y_left = np.empty(N)
    flags = np.zeros(N, dtype=np.int8)
    for k in range(N):
        y_left[k] = C @ x + D * u[k]
        if k > 0 and _crossed(trig[k - 1], trig[k]):
            x = x * rho
            flags[k] = 1
        y[k] = C @ x + D * u[k]
        x = Phi @ x + G0 * u[k] + G1 * u[k + 1]
    return y, y_left, flags


def closed_loop(Ac, Bc, Cc, Dc, rho, Ap, Bp, Cp, r, limit):
    """Sampled loop ``e = r - y``; controller resets on ``e``; plant has D = 0.

    Returns ``(e, u, y, flags, stop)`` where ``stop`` is the index at which
    ``|y|`` exceeded ``limit`` or -1.
    """
    nc = Ac.shape[0]
    npl = Ap.shape[0]
    N = r.shape[0]
    xc = np.zeros(nc)
    xp = np.zeros(npl)
    e = np.zeros(N)
    u = np.zeros(N)
    y = np.zeros(N)
    flags = np.zeros(N, dtype=np.int8)
    e_prev = 0.0
    for k in range(N):
        yk = Cp @ xp
        ek = r[k] - yk
        if k > 0 and _crossed(e_prev, ek):
            xc = xc * rho
            flags[k] = 1
        uk = Cc @ xc + Dc * ek
        e[k] = ek
        u[k] = uk
        y[k] = yk
        if abs(yk) > limit:
            return e, u, y, flags, k
        xc = Ac @ xc + Bc * ek
        xp = Ap @ xp + Bp * uk
        e_prev = ek
    return e, u, y, flags, -1
