"""Numba loops for the collision quadrature."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def accumulate_collisions(f, F, lo, hi, offsets, sid, nid, beta, n, out):
    """Add the quadrature of the gain-minus-loss integrand to ``out``.

    f      : (M, N) fields on the grid, M spatial cells
    F      : (M, S, N) fields at shifted points, ``F[m, s, i] = f_m(v_i - d_s)``
    lo, hi : (S, 3) inclusive per-axis index range where ``v_i - d_s`` stays
             inside the velocity cube
    offsets: (P, 3) integer grid offsets ``k`` with ``v_* = v - k h``, one
             from each pair ``{k, -k}``: the term of ``-k`` at node ``j``
             equals the term of ``k`` at node ``i = j + k``, so each
             evaluation is added to both nodes
    sid    : (P,) displacement id of ``d`` for each offset
    nid    : (P,) displacement id of ``-d``
    beta   : (P,) kernel times quadrature weights
    """
    M = f.shape[0]
    P = offsets.shape[0]
    nn = n * n
    for m in range(M):
        fm = f[m]
        om = out[m]
        for p in range(P):
            s = sid[p]
            t = nid[p]
            k0 = offsets[p, 0]
            k1 = offsets[p, 1]
            k2 = offsets[p, 2]
            a0 = max(max(0, k0), max(lo[s, 0], lo[t, 0] + k0))
            a1 = min(min(n - 1, n - 1 + k0), min(hi[s, 0], hi[t, 0] + k0))
            b0 = max(max(0, k1), max(lo[s, 1], lo[t, 1] + k1))
            b1 = min(min(n - 1, n - 1 + k1), min(hi[s, 1], hi[t, 1] + k1))
            c0 = max(max(0, k2), max(lo[s, 2], lo[t, 2] + k2))
            c1 = min(min(n - 1, n - 1 + k2), min(hi[s, 2], hi[t, 2] + k2))
            shift = k0 * nn + k1 * n + k2
            bp = beta[p]
            Fs = F[m, s]
            Ft = F[m, t]
            for a in range(a0, a1 + 1):
                for b in range(b0, b1 + 1):
                    base = a * nn + b * n
                    for c in range(c0, c1 + 1):
                        i = base + c
                        j = i - shift
                        fi = fm[i]
                        fj = fm[j]
                        fp = Fs[i]
                        fq = Ft[j]
                        r = bp * (fp * fq * (1.0 - fi) * (1.0 - fj) - fi * fj * (1.0 - fp) * (1.0 - fq))
                        om[i] += r
                        om[j] += r


def warmup():
    z = np.zeros((1, 1), dtype=np.int64)
    accumulate_collisions(
        np.zeros((1, 1)),
        np.zeros((1, 1, 1)),
        np.zeros((1, 3), dtype=np.int64),
        np.zeros((1, 3), dtype=np.int64),
        np.zeros((1, 3), dtype=np.int64),
        z[0],
        z[0],
        np.zeros(1),
        1,
        np.zeros((1, 1)),
    )
