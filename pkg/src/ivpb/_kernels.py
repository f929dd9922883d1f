"""Numba kernels for the hard-sphere collision operator.

All kernels work on flattened velocity fields indexed lexicographically,
``i = (ix * n + iy) * n + iz``, over the uniform midpoint grid
``v = vmin + (idx + 1/2) dv`` per axis.  Post-collision velocities leave the
node set and are brought back by tri-linear (order 1) or tri-cubic (order 3)
interpolation; points outside the truncation box contribute zero.
"""

import numba
import numpy as np

__all__ = [
    "collide_pair_kernel",
    "nu_analytic_kernel",
    "assemble_L_kernel",
]


@numba.njit(inline="always")
def _axis_weights(p, vmin, dv, n, order, idx, wgt):
    """Interpolation stencil along one axis at physical coordinate p."""
    q = (p - vmin) / dv - 0.5
    i0 = int(np.floor(q))
    a = q - i0
    if order == 1:
        idx[0] = i0
        idx[1] = i0 + 1
        wgt[0] = 1.0 - a
        wgt[1] = a
        return 2
    # 4-point Lagrange at offsets -1, 0, 1, 2 (exact through cubics)
    idx[0] = i0 - 1
    idx[1] = i0
    idx[2] = i0 + 1
    idx[3] = i0 + 2
    wgt[0] = -a * (a - 1.0) * (a - 2.0) / 6.0
    wgt[1] = (a + 1.0) * (a - 1.0) * (a - 2.0) / 2.0
    wgt[2] = -(a + 1.0) * a * (a - 2.0) / 2.0
    wgt[3] = (a + 1.0) * a * (a - 1.0) / 6.0
    return 4


@numba.njit(inline="always")
def _interp(F, px, py, pz, vmin, dv, n, order, ix, iy, iz, wx, wy, wz):
    m = _axis_weights(px, vmin, dv, n, order, ix, wx)
    _axis_weights(py, vmin, dv, n, order, iy, wy)
    _axis_weights(pz, vmin, dv, n, order, iz, wz)
    val = 0.0
    for a in range(m):
        ia = ix[a]
        if ia < 0 or ia >= n:
            continue
        for b in range(m):
            ib = iy[b]
            if ib < 0 or ib >= n:
                continue
            wab = wx[a] * wy[b]
            base = (ia * n + ib) * n
            for c in range(m):
                ic = iz[c]
                if ic < 0 or ic >= n:
                    continue
                val += wab * wz[c] * F[base + ic]
    return val


@numba.njit(cache=True)
def collide_pair_kernel(F1, F2, vmin, dv, n, dirs, wdirs, order, same_fields):
    """Gain term and loss frequency of Q(F1, F2).

    Returns (gain, nu1) with loss(v) = F2(v) * nu1(v) and
    nu1(v) = sum_u w_u F1(u) sum_om w_om |(u - v).om|; the loss uses the same
    discrete angular rule as the gain so that the two cancel exactly on
    collision equilibria.  The (v, u) exchange symmetry shares the kernel and
    post-collision geometry between the two rows of each pair.
    """
    nn = n * n * n
    ndir = len(wdirs)
    wq = dv * dv * dv
    gain = np.zeros(nn)
    nu1 = np.zeros(nn)
    ix = np.empty(4, dtype=np.int64)
    iy = np.empty(4, dtype=np.int64)
    iz = np.empty(4, dtype=np.int64)
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    for i in range(nn):
        ivx = i // (n * n)
        ivy = (i // n) % n
        ivz = i % n
        vx = vmin + (ivx + 0.5) * dv
        vy = vmin + (ivy + 0.5) * dv
        vz = vmin + (ivz + 0.5) * dv
        for j in range(i + 1, nn):
            iux = j // (n * n)
            iuy = (j // n) % n
            iuz = j % n
            ux = vmin + (iux + 0.5) * dv
            uy = vmin + (iuy + 0.5) * dv
            uz = vmin + (iuz + 0.5) * dv
            gx = ux - vx
            gy = uy - vy
            gz = uz - vz
            kappa = 0.0
            gsum_i = 0.0
            gsum_j = 0.0
            for m in range(ndir):
                s = gx * dirs[m, 0] + gy * dirs[m, 1] + gz * dirs[m, 2]
                ws = wdirs[m] * abs(s)
                if ws == 0.0:
                    continue
                kappa += ws
                dx = s * dirs[m, 0]
                dy = s * dirs[m, 1]
                dz = s * dirs[m, 2]
                # v' = v + d, u' = u - d; the swapped pair (u, v) sees the
                # same two post-collision points with roles exchanged.
                f1_up = _interp(F1, ux - dx, uy - dy, uz - dz, vmin, dv, n,
                                order, ix, iy, iz, wx, wy, wz)
                f2_vp = _interp(F2, vx + dx, vy + dy, vz + dz, vmin, dv, n,
                                order, ix, iy, iz, wx, wy, wz)
                gsum_i += ws * f1_up * f2_vp
                if same_fields:
                    gsum_j += ws * f1_up * f2_vp
                else:
                    f1_vp = _interp(F1, vx + dx, vy + dy, vz + dz, vmin, dv, n,
                                    order, ix, iy, iz, wx, wy, wz)
                    f2_up = _interp(F2, ux - dx, uy - dy, uz - dz, vmin, dv, n,
                                    order, ix, iy, iz, wx, wy, wz)
                    gsum_j += ws * f1_vp * f2_up
            gain[i] += wq * gsum_i
            gain[j] += wq * gsum_j
            nu1[i] += wq * kappa * F1[j]
            nu1[j] += wq * kappa * F1[i]
    return gain, nu1


@numba.njit(cache=True)
def nu_analytic_kernel(mu, vmin, dv, n):
    """nu(v) = 2 pi sum_u w_u |u - v| mu(u): hard-sphere collision frequency
    with the angular integral in closed form."""
    nn = n * n * n
    wq = dv * dv * dv
    out = np.zeros(nn)
    for i in range(nn):
        ivx = i // (n * n)
        ivy = (i // n) % n
        ivz = i % n
        vx = vmin + (ivx + 0.5) * dv
        vy = vmin + (ivy + 0.5) * dv
        vz = vmin + (ivz + 0.5) * dv
        acc = 0.0
        for j in range(nn):
            iux = j // (n * n)
            iuy = (j // n) % n
            iuz = j % n
            gx = vmin + (iux + 0.5) * dv - vx
            gy = vmin + (iuy + 0.5) * dv - vy
            gz = vmin + (iuz + 0.5) * dv - vz
            acc += np.sqrt(gx * gx + gy * gy + gz * gz) * mu[j]
        out[i] = 2.0 * np.pi * wq * acc
    return out


@numba.njit(cache=True)
def assemble_L_kernel(mu, sqmu, vmin, dv, n, dirs, wdirs, order):
    """Dense matrix of the linearized operator L g = nu g - K_mu g.

    Uses the exact Gaussian collision identity mu(u') mu(v') = mu(u) mu(v) to
    reduce the action to

        L g(v) = sqrt(mu(v)) sum_u w_u mu(u) sum_om w_om |s|
                 [G(v) + G(u) - G(v') - G(u')],    G = g / sqrt(mu),

    so only the smooth ratio G is interpolated; the nu g part is the G(v)
    term and cancellation on the null space is structural.
    """
    nn = n * n * n
    ndir = len(wdirs)
    wq = dv * dv * dv
    M = np.zeros((nn, nn))
    ix = np.empty(4, dtype=np.int64)
    iy = np.empty(4, dtype=np.int64)
    iz = np.empty(4, dtype=np.int64)
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    for i in range(nn):
        ivx = i // (n * n)
        ivy = (i // n) % n
        ivz = i % n
        vx = vmin + (ivx + 0.5) * dv
        vy = vmin + (ivy + 0.5) * dv
        vz = vmin + (ivz + 0.5) * dv
        for j in range(i + 1, nn):
            iux = j // (n * n)
            iuy = (j // n) % n
            iuz = j % n
            ux = vmin + (iux + 0.5) * dv
            uy = vmin + (iuy + 0.5) * dv
            uz = vmin + (iuz + 0.5) * dv
            gx = ux - vx
            gy = uy - vy
            gz = uz - vz
            # ci scales row i (field point v), cj scales row j (field point u)
            ci = wq * sqmu[i] * mu[j]
            cj = wq * sqmu[j] * mu[i]
            for m in range(ndir):
                s = gx * dirs[m, 0] + gy * dirs[m, 1] + gz * dirs[m, 2]
                ws = wdirs[m] * abs(s)
                if ws == 0.0:
                    continue
                ai = ci * ws
                aj = cj * ws
                M[i, i] += ai / sqmu[i]
                M[i, j] += ai / sqmu[j]
                M[j, j] += aj / sqmu[j]
                M[j, i] += aj / sqmu[i]
                dx = s * dirs[m, 0]
                dy = s * dirs[m, 1]
                dz = s * dirs[m, 2]
                for point in range(2):
                    if point == 0:
                        px = vx + dx
                        py = vy + dy
                        pz = vz + dz
                    else:
                        px = ux - dx
                        py = uy - dy
                        pz = uz - dz
                    mlen = _axis_weights(px, vmin, dv, n, order, ix, wx)
                    _axis_weights(py, vmin, dv, n, order, iy, wy)
                    _axis_weights(pz, vmin, dv, n, order, iz, wz)
                    for a in range(mlen):
                        ia = ix[a]
                        if ia < 0 or ia >= n:
                            continue
                        for b in range(mlen):
                            ib = iy[b]
                            if ib < 0 or ib >= n:
                                continue
                            wab = wx[a] * wy[b]
                            base = (ia * n + ib) * n
                            for c in range(mlen):
                                ic = iz[c]
                                if ic < 0 or ic >= n:
                                    continue
                                col = base + ic
                                wcol = wab * wz[c] / sqmu[col]
                                M[i, col] -= ai * wcol
                                M[j, col] -= aj * wcol
    return M
