"""numba kernels for path-dependent TreeSHAP and the exhaustive oracle.

Trees arrive flattened (see ``gbt.FlatEnsemble``): global node ids, leaves
marked by ``feature < 0``, ``x <= threshold`` goes left.

The polynomial routine follows the EXTEND / UNWIND / UNWOUND-SUM recursion
of Lundberg et al. (2018), unrolled onto an explicit stack (numba's on-disk
cache mishandles recursive functions). ``cond`` = +1 / -1 pins ``cond_feat`` into or out
of every coalition, which is how interaction values are obtained.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _extend(fi, zf, of, pw, s, depth, zero, one, feat):
    fi[s + depth] = feat
    zf[s + depth] = zero
    of[s + depth] = one
    pw[s + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[s + i + 1] += one * pw[s + i] * (i + 1) / (depth + 1)
        pw[s + i] = zero * pw[s + i] * (depth - i) / (depth + 1)


@njit(cache=True, nogil=True)
def _unwind(fi, zf, of, pw, s, depth, idx):
    one = of[s + idx]
    zero = zf[s + idx]
    nxt = pw[s + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[s + i]
            pw[s + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[s + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[s + i] = pw[s + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        fi[s + i] = fi[s + i + 1]
        zf[s + i] = zf[s + i + 1]
        of[s + i] = of[s + i + 1]


@njit(cache=True, nogil=True)
def _unwound_sum(fi, zf, of, pw, s, depth, idx):
    one = of[s + idx]
    zero = zf[s + idx]
    nxt = pw[s + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[s + i] - tmp * zero * ((depth - i) / (depth + 1))
        else:
            total += (pw[s + i] / zero) / ((depth - i) / (depth + 1))
    return total


@njit(cache=True, nogil=True)
def _tree_phi(root, x, cond, cond_feat, feature, threshold, left, right, value, cover,
              fi, zf, of, pw, phi, st_i, st_f):
    """Accumulate one tree's Shapley values for row ``x`` into ``phi``.

    Depth-first walk with an explicit frame stack (hot child first). Frame
    layout: st_i = (node, depth, s_parent, parent_feature),
    st_f = (parent_zero, parent_one, cond_fraction).
    """
    if feature[root] < 0:
        return
    # slot 0 is the empty parent path of the root
    fi[0] = -1
    zf[0] = 1.0
    of[0] = 1.0
    pw[0] = 1.0
    top = 0
    st_i[0, 0] = root
    st_i[0, 1] = 0
    st_i[0, 2] = 0
    st_i[0, 3] = -1
    st_f[0, 0] = 1.0
    st_f[0, 1] = 1.0
    st_f[0, 2] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = st_i[top, 0]
        depth = st_i[top, 1]
        s_parent = st_i[top, 2]
        pfeat = st_i[top, 3]
        pzero = st_f[top, 0]
        pone = st_f[top, 1]
        cond_frac = st_f[top, 2]
        if cond_frac == 0.0:
            continue
        s = s_parent + depth + 1
        for i in range(depth + 1):
            fi[s + i] = fi[s_parent + i]
            zf[s + i] = zf[s_parent + i]
            of[s + i] = of[s_parent + i]
            pw[s + i] = pw[s_parent + i]
        if cond == 0 or cond_feat != pfeat:
            _extend(fi, zf, of, pw, s, depth, pzero, pone, pfeat)

        f = feature[node]
        if f < 0:
            for i in range(1, depth + 1):
                w = _unwound_sum(fi, zf, of, pw, s, depth, i)
                phi[fi[s + i]] += w * (of[s + i] - zf[s + i]) * value[node] * cond_frac
            continue

        if x[f] <= threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        hot_zero = cover[hot] / cover[node]
        cold_zero = cover[cold] / cover[node]
        in_zero = 1.0
        in_one = 1.0

        idx = 0
        while idx <= depth:
            if fi[s + idx] == f:
                break
            idx += 1
        if idx != depth + 1:
            in_zero = zf[s + idx]
            in_one = of[s + idx]
            _unwind(fi, zf, of, pw, s, depth, idx)
            depth -= 1

        hot_frac = cond_frac
        cold_frac = cond_frac
        if cond > 0 and f == cond_feat:
            cold_frac = 0.0
            depth -= 1
        elif cond < 0 and f == cond_feat:
            hot_frac *= hot_zero
            cold_frac *= cold_zero
            depth -= 1

        # cold is pushed first so the hot subtree completes before it, and the
        # parent path at s is still intact when cold copies it
        st_i[top, 0] = cold
        st_i[top, 1] = depth + 1
        st_i[top, 2] = s
        st_i[top, 3] = f
        st_f[top, 0] = cold_zero * in_zero
        st_f[top, 1] = 0.0
        st_f[top, 2] = cold_frac
        top += 1
        st_i[top, 0] = hot
        st_i[top, 1] = depth + 1
        st_i[top, 2] = s
        st_i[top, 3] = f
        st_f[top, 0] = hot_zero * in_zero
        st_f[top, 1] = in_one
        st_f[top, 2] = hot_frac
        top += 1


def path_buffer_size(max_depth):
    d = max_depth + 3
    return d * (d + 1) // 2 + d + 2


def stack_size(max_depth):
    return max_depth + 4


@njit(cache=True, nogil=True)
def shap_rows(X, feature, threshold, left, right, value, cover, roots, buf_size, stack):
    """Raw (unshrunk) Shapley values, rows x features, summed over trees."""
    n, m = X.shape
    out = np.zeros((n, m))
    fi = np.empty(buf_size, dtype=np.int64)
    zf = np.empty(buf_size)
    of = np.empty(buf_size)
    pw = np.empty(buf_size)
    st_i = np.empty((stack, 4), dtype=np.int64)
    st_f = np.empty((stack, 3))
    phi = np.zeros(m)
    for r in range(n):
        phi[:] = 0.0
        for t in range(len(roots)):
            _tree_phi(roots[t], X[r], 0, -1, feature, threshold, left, right, value, cover,
                      fi, zf, of, pw, phi, st_i, st_f)
        out[r] = phi
    return out


@njit(cache=True, nogil=True)
def interaction_rows(X, used, feature, threshold, left, right, value, cover, roots, buf_size, stack):
    """Raw half-differences (phi_i | j on - phi_i | j off) / 2, indexed [row, j, i].

    Only features listed in ``used`` are conditioned on; others stay zero.
    """
    n, m = X.shape
    out = np.zeros((n, m, m))
    fi = np.empty(buf_size, dtype=np.int64)
    zf = np.empty(buf_size)
    of = np.empty(buf_size)
    pw = np.empty(buf_size)
    st_i = np.empty((stack, 4), dtype=np.int64)
    st_f = np.empty((stack, 3))
    on = np.zeros(m)
    off = np.zeros(m)
    for r in range(n):
        for u in range(len(used)):
            j = used[u]
            on[:] = 0.0
            off[:] = 0.0
            for t in range(len(roots)):
                _tree_phi(roots[t], X[r], 1, j, feature, threshold, left, right, value, cover,
                          fi, zf, of, pw, on, st_i, st_f)
                _tree_phi(roots[t], X[r], -1, j, feature, threshold, left, right, value, cover,
                          fi, zf, of, pw, off, st_i, st_f)
            for i in range(m):
                out[r, j, i] = (on[i] - off[i]) / 2.0
    return out


@njit(cache=True, nogil=True)
def _subset_value(root, mask, x, feature, threshold, left, right, value, cover, st_n, st_w):
    """v(S) of one tree: follow x on features in S, cover-average the rest."""
    total = 0.0
    st_n[0] = root
    st_w[0] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = st_n[top]
        w = st_w[top]
        f = feature[node]
        if f < 0:
            total += w * value[node]
        elif (mask >> f) & 1:
            st_n[top] = left[node] if x[f] <= threshold[node] else right[node]
            st_w[top] = w
            top += 1
        else:
            st_n[top] = left[node]
            st_w[top] = w * cover[left[node]] / cover[node]
            st_n[top + 1] = right[node]
            st_w[top + 1] = w * cover[right[node]] / cover[node]
            top += 2
    return total


@njit(cache=True, nogil=True)
def coalition_values(x, n_features, feature, threshold, left, right, value, cover, roots):
    """v(S) for every bitmask S over ``n_features`` players, summed over trees."""
    size = 1 << n_features
    v = np.zeros(size)
    # depth-first stack never holds more than one pending sibling per level
    st_n = np.empty(len(feature) + 2, dtype=np.int64)
    st_w = np.empty(len(feature) + 2)
    for mask in range(size):
        total = 0.0
        for t in range(len(roots)):
            total += _subset_value(roots[t], mask, x, feature, threshold, left, right, value, cover,
                                   st_n, st_w)
        v[mask] = total
    return v


@njit(cache=True, nogil=True)
def _popcount(mask):
    c = 0
    while mask:
        mask &= mask - 1
        c += 1
    return c


@njit(cache=True, nogil=True)
def shapley_from_values(v, n, weights):
    """phi_j = sum over S not containing j of weights[|S|] * (v(S+j) - v(S))."""
    phi = np.zeros(n)
    for mask in range(1 << n):
        s = _popcount(mask)
        for j in range(n):
            if not (mask >> j) & 1:
                phi[j] += weights[s] * (v[mask | (1 << j)] - v[mask])
    return phi


@njit(cache=True, nogil=True)
def interactions_from_values(v, n, weights):
    """Off-diagonal Shapley interaction index halved: weights already carry the 1/2."""
    Phi = np.zeros((n, n))
    for mask in range(1 << n):
        s = _popcount(mask)
        for j in range(n):
            if (mask >> j) & 1:
                continue
            for k in range(j + 1, n):
                if (mask >> k) & 1:
                    continue
                d = v[mask | (1 << j) | (1 << k)] - v[mask | (1 << j)] - v[mask | (1 << k)] + v[mask]
                Phi[j, k] += weights[s] * d
    for j in range(n):
        for k in range(j + 1, n):
            Phi[k, j] = Phi[j, k]
    return Phi
