"""Numba kernels for histogram training and per-prediction attribution.

Everything here operates on flat arrays so the hot loops compile to
tight machine code. The bin code convention is shared with the binner:
code 0 is the reserved zero/missing pseudo-bin, codes 1..k are value
bins in ascending value order.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# path buffers for the attribution walk; trees are grown leaf-wise with
# max_leaves <= 255 but the depth guard in the grower keeps paths short
MAX_PATH = 64
MAX_STACK = 2 * MAX_PATH


@njit(cache=True, parallel=True)
def build_histogram(codes, rows, grad, hist_g, hist_n):
    """Accumulate per-(feature, bin) gradient sums and row counts.

    codes is feature-major uint16 (F, N); rows indexes the node's
    members. Parallel over features, sequential over rows within a
    feature, so the accumulation order is deterministic.
    """
    n_features = codes.shape[0]
    n_rows = rows.shape[0]
    for f in prange(n_features):
        for b in range(hist_g.shape[1]):
            hist_g[f, b] = 0.0
            hist_n[f, b] = 0.0
        for i in range(n_rows):
            r = rows[i]
            b = codes[f, r]
            hist_g[f, b] += grad[r]
            hist_n[f, b] += 1.0


@njit(cache=True)
def subtract_histogram(parent_g, parent_n, child_g, child_n, out_g, out_n):
    for f in range(parent_g.shape[0]):
        for b in range(parent_g.shape[1]):
            out_g[f, b] = parent_g[f, b] - child_g[f, b]
            out_n[f, b] = parent_n[f, b] - child_n[f, b]


@njit(cache=True)
def best_splits(hist_g, hist_n, n_bins, l2, min_leaf, out_gain, out_bin, out_default_left):
    """Scan every (feature, bin boundary, default side) split candidate.

    A split sends value bins 1..b left and b+1..k right; the zero bin
    joins the side given by default_left. b == 0 puts only the zero bin
    on the left, b == k puts it alone on the right. Ties keep the first
    candidate in scan order (bin ascending, default-left first) so the
    choice is deterministic.
    """
    n_features = hist_g.shape[0]
    for f in range(n_features):
        out_gain[f] = 0.0
        out_bin[f] = -1
        out_default_left[f] = 1
        k = n_bins[f]
        if k < 1:
            continue
        g0 = hist_g[f, 0]
        n0 = hist_n[f, 0]
        g_total = g0
        n_total = n0
        for b in range(1, k + 1):
            g_total += hist_g[f, b]
            n_total += hist_n[f, b]
        parent = g_total * g_total / (n_total + l2)
        cg = 0.0
        cn = 0.0
        for b in range(0, k + 1):
            if b >= 1:
                cg += hist_g[f, b]
                cn += hist_n[f, b]
            # zero bin left
            gl = cg + g0
            nl = cn + n0
            gr = g_total - gl
            nr = n_total - nl
            if nl >= min_leaf and nr >= min_leaf:
                gain = gl * gl / (nl + l2) + gr * gr / (nr + l2) - parent
                if gain > out_gain[f]:
                    out_gain[f] = gain
                    out_bin[f] = b
                    out_default_left[f] = 1
            # zero bin right
            gl = cg
            nl = cn
            gr = g_total - gl
            nr = n_total - nl
            if nl >= min_leaf and nr >= min_leaf:
                gain = gl * gl / (nl + l2) + gr * gr / (nr + l2) - parent
                if gain > out_gain[f]:
                    out_gain[f] = gain
                    out_bin[f] = b
                    out_default_left[f] = 0


@njit(cache=True, parallel=True)
def predict_trees(X, feat, thr, dleft, left, right, value, roots, out):
    """Sum tree outputs for every row; zeros and NaNs follow default_left."""
    n = X.shape[0]
    n_trees = roots.shape[0]
    for i in prange(n):
        acc = 0.0
        for t in range(n_trees):
            j = roots[t]
            while left[j] >= 0:
                xv = X[i, feat[j]]
                if xv == 0.0 or np.isnan(xv):
                    go_left = dleft[j] == 1
                else:
                    go_left = xv <= thr[j]
                j = left[j] if go_left else right[j]
            acc += value[j]
        out[i] = acc


# ---------------------------------------------------------------------------
# attribution (per-feature contribution) walk


@njit(cache=True)
def _extend(pd, pz, po, pw, length, zero_fraction, one_fraction, feature_index):
    pd[length] = feature_index
    pz[length] = zero_fraction
    po[length] = one_fraction
    pw[length] = 1.0 if length == 0 else 0.0
    for i in range(length - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1.0) / (length + 1.0)
        pw[i] = zero_fraction * pw[i] * (length - i) / (length + 1.0)
    return length + 1


@njit(cache=True)
def _unwound_sum(pd, pz, po, pw, length, index):
    ud = length - 1
    one = po[index]
    zero = pz[index]
    next_one = pw[ud]
    total = 0.0
    if one != 0.0:
        for i in range(ud - 1, -1, -1):
            tmp = next_one * (ud + 1.0) / ((i + 1.0) * one)
            total += tmp
            next_one = pw[i] - tmp * zero * (ud - i) / (ud + 1.0)
    else:
        for i in range(ud - 1, -1, -1):
            total += pw[i] / (zero * (ud - i) / (ud + 1.0))
    return total


@njit(cache=True)
def _unwind(pd, pz, po, pw, length, index):
    ud = length - 1
    one = po[index]
    zero = pz[index]
    next_one = pw[ud]
    if one != 0.0:
        for i in range(ud - 1, -1, -1):
            tmp = pw[i]
            pw[i] = next_one * (ud + 1.0) / ((i + 1.0) * one)
            next_one = tmp - pw[i] * zero * (ud - i) / (ud + 1.0)
    else:
        for i in range(ud - 1, -1, -1):
            pw[i] = pw[i] / (zero * (ud - i) / (ud + 1.0))
    for i in range(index, ud):
        pd[i] = pd[i + 1]
        pz[i] = pz[i + 1]
        po[i] = po[i + 1]
    return ud


@njit(cache=True)
def _shap_one_tree(x, root, feat, thr, dleft, left, right, value, cover, phi_row,
                   sn, sl, sz, so, si, spd, spz, spo, spw,
                   wd, wz, wo, ww):
    """Exact attribution for one tree and one row via a manual DFS stack.

    Port of the polynomial-time path algorithm: each stack frame holds
    the parent's unique path plus the incoming zero/one fractions, the
    pop extends the path, leaves credit every path feature through the
    unwound weight sum, and revisited features are unwound first.
    """
    sp = 0
    sn[sp] = root
    sl[sp] = 0
    sz[sp] = 1.0
    so[sp] = 1.0
    si[sp] = -1
    sp += 1
    while sp > 0:
        sp -= 1
        j = sn[sp]
        plen = sl[sp]
        pzf = sz[sp]
        pof = so[sp]
        pif = si[sp]
        for q in range(plen):
            wd[q] = spd[sp, q]
            wz[q] = spz[sp, q]
            wo[q] = spo[sp, q]
            ww[q] = spw[sp, q]
        length = _extend(wd, wz, wo, ww, plen, pzf, pof, pif)
        if left[j] < 0:
            for idx in range(1, length):
                w = _unwound_sum(wd, wz, wo, ww, length, idx)
                phi_row[wd[idx]] += w * (wo[idx] - wz[idx]) * value[j]
            continue
        f = feat[j]
        xv = x[f]
        if xv == 0.0 or np.isnan(xv):
            go_left = dleft[j] == 1
        else:
            go_left = xv <= thr[j]
        hot = left[j] if go_left else right[j]
        cold = right[j] if go_left else left[j]
        iz = 1.0
        io = 1.0
        found = -1
        for q in range(length):
            if wd[q] == f:
                found = q
                break
        if found >= 0:
            iz = wz[found]
            io = wo[found]
            length = _unwind(wd, wz, wo, ww, length, found)
        # push cold then hot (pop order: hot first); each child frame
        # snapshots the current path
        r_j = cover[j]
        for child, czf, cof in ((cold, iz * cover[cold] / r_j, 0.0),
                                (hot, iz * cover[hot] / r_j, io)):
            sn[sp] = child
            sl[sp] = length
            sz[sp] = czf
            so[sp] = cof
            si[sp] = f
            for q in range(length):
                spd[sp, q] = wd[q]
                spz[sp, q] = wz[q]
                spo[sp, q] = wo[q]
                spw[sp, q] = ww[q]
            sp += 1


@njit(cache=True, parallel=True)
def shap_values(X, feat, thr, dleft, left, right, value, cover, roots, phi):
    """Per-feature contributions for every row, summed over all trees."""
    n = X.shape[0]
    n_trees = roots.shape[0]
    for i in prange(n):
        sn = np.empty(MAX_STACK, np.int64)
        sl = np.empty(MAX_STACK, np.int32)
        sz = np.empty(MAX_STACK, np.float64)
        so = np.empty(MAX_STACK, np.float64)
        si = np.empty(MAX_STACK, np.int32)
        spd = np.empty((MAX_STACK, MAX_PATH), np.int32)
        spz = np.empty((MAX_STACK, MAX_PATH), np.float64)
        spo = np.empty((MAX_STACK, MAX_PATH), np.float64)
        spw = np.empty((MAX_STACK, MAX_PATH), np.float64)
        wd = np.empty(MAX_PATH, np.int32)
        wz = np.empty(MAX_PATH, np.float64)
        wo = np.empty(MAX_PATH, np.float64)
        ww = np.empty(MAX_PATH, np.float64)
        x = X[i]
        for t in range(n_trees):
            _shap_one_tree(
                x, roots[t], feat, thr, dleft, left, right, value, cover,
                phi[i], sn, sl, sz, so, si, spd, spz, spo, spw, wd, wz, wo, ww,
            )
