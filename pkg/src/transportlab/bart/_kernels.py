"""Compiled inner loops of the sampler.

Random numbers are drawn by the caller and passed in, so the numpy
generator remains the only source of randomness.
"""

import math

import numpy as np
from numba import njit

LEAF = -1
GROW, PRUNE, CHANGE = 0, 1, 2


@njit(cache=True)
def _log_split(d, eta, beta):
    return math.log(beta * (1.0 + d) ** (-eta))


@njit(cache=True)
def _log_nosplit(d, eta, beta):
    return math.log1p(-beta * (1.0 + d) ** (-eta))


@njit(cache=True)
def _lml(W, S, sigma2, tau2):
    prec = 1.0 / tau2 + W / sigma2
    return -0.5 * math.log(tau2 * prec) + 0.5 * (S / sigma2) ** 2 / prec


@njit(cache=True)
def _pick(u, k):
    i = int(u * k)
    return k - 1 if i >= k else i


@njit(cache=True)
def _node_lists(var, left, right, alive):
    cap = var.shape[0]
    leaves = np.empty(cap, np.int64)
    internal = np.empty(cap, np.int64)
    prunable = np.empty(cap, np.int64)
    nl = ni = npr = 0
    for i in range(cap):
        if not alive[i]:
            continue
        if var[i] == LEAF:
            leaves[nl] = i
            nl += 1
        else:
            internal[ni] = i
            ni += 1
            if var[left[i]] == LEAF and var[right[i]] == LEAF:
                prunable[npr] = i
                npr += 1
    return leaves[:nl], internal[:ni], prunable[:npr]


@njit(cache=True)
def _draw_rule(ranks, uvals, n_unique, rows, u_var, u_cut):
    """Uniform splittable column among ``rows``, then a uniform midpoint cut.

    ``ranks[i, j]`` indexes row ``i``'s value in the sorted distinct values
    ``uvals[j, :n_unique[j]]`` of column ``j``.
    """
    p = ranks.shape[1]
    m = rows.shape[0]
    avail = np.empty(p, np.int64)
    na = 0
    for j in range(p):
        lo = n_unique[j]
        hi = -1
        for k in range(m):
            x = ranks[rows[k], j]
            if x < lo:
                lo = x
            if x > hi:
                hi = x
        if hi > lo:
            avail[na] = j
            na += 1
    if na == 0:
        return -1, 0.0
    v = avail[_pick(u_var, na)]
    present = np.zeros(n_unique[v], np.bool_)
    for k in range(m):
        present[ranks[rows[k], v]] = True
    n_cuts = -1
    for a in range(n_unique[v]):
        if present[a]:
            n_cuts += 1
    target = _pick(u_cut, n_cuts)
    seen = -1
    prev = -1
    for a in range(n_unique[v]):
        if present[a]:
            if seen == target:
                return v, 0.5 * (uvals[v, prev] + uvals[v, a])
            seen += 1
            prev = a
    return -1, 0.0


@njit(cache=True)
def _alloc(alive):
    for i in range(1, alive.shape[0]):
        if not alive[i]:
            return i
    return -1


@njit(cache=True)
def tree_move(
    X, ranks, uvals, n_unique, r, w, leaf_of, var, cut, left, right, parent, depth, alive,
    u, probs, eta, beta, sigma2, tau2, max_depth,
):
    """One Metropolis-Hastings structure move on a single tree.

    Returns (move, accepted, n_leaves_after).
    """
    leaves, internal, prunable = _node_lists(var, left, right, alive)
    nl = leaves.shape[0]
    if internal.shape[0] == 0:
        pg, pp = 1.0, 0.0
    else:
        pg, pp = probs[0], probs[1]
    move = GROW if u[0] < pg else (PRUNE if u[0] < pg + pp else CHANGE)
    n = leaf_of.shape[0]

    if move == GROW:
        leaf = leaves[_pick(u[1], nl)]
        d = depth[leaf]
        if max_depth >= 0 and d >= max_depth:
            return move, False, nl
        cnt = 0
        for i in range(n):
            if leaf_of[i] == leaf:
                cnt += 1
        rows = np.empty(cnt, np.int64)
        cnt = 0
        for i in range(n):
            if leaf_of[i] == leaf:
                rows[cnt] = i
                cnt += 1
        v, c = _draw_rule(ranks, uvals, n_unique, rows, u[2], u[3])
        if v < 0:
            return move, False, nl
        WL = WR = SL = SR = 0.0
        for k in range(rows.shape[0]):
            i = rows[k]
            if X[i, v] <= c:
                WL += w[i]
                SL += w[i] * r[i]
            else:
                WR += w[i]
                SR += w[i] * r[i]
        if WL <= 0.0 or WR <= 0.0:
            return move, False, nl
        lik = _lml(WL, SL, sigma2, tau2) + _lml(WR, SR, sigma2, tau2) - _lml(WL + WR, SL + SR, sigma2, tau2)
        prior = _log_split(d, eta, beta) + 2.0 * _log_nosplit(d + 1, eta, beta) - _log_nosplit(d, eta, beta)
        n_prunable = prunable.shape[0] + 1
        p = parent[leaf]
        if p != LEAF:
            sib = right[p] if left[p] == leaf else left[p]
            if var[sib] == LEAF:
                n_prunable -= 1
        trans = math.log(probs[1] / n_prunable) - math.log(pg / nl)
        if math.log(u[4]) >= lik + prior + trans:
            return move, False, nl
        lo = _alloc(alive)
        alive[lo] = True
        hi = _alloc(alive)
        alive[hi] = True
        for s in (lo, hi):
            var[s] = LEAF
            cut[s] = 0.0
            left[s] = LEAF
            right[s] = LEAF
            parent[s] = leaf
            depth[s] = d + 1
        var[leaf] = v
        cut[leaf] = c
        left[leaf] = lo
        right[leaf] = hi
        for k in range(rows.shape[0]):
            i = rows[k]
            leaf_of[i] = lo if X[i, v] <= c else hi
        return move, True, nl + 1

    if move == PRUNE:
        node = prunable[_pick(u[1], prunable.shape[0])]
        lo = left[node]
        hi = right[node]
        d = depth[node]
        WL = WR = SL = SR = 0.0
        for i in range(n):
            if leaf_of[i] == lo:
                WL += w[i]
                SL += w[i] * r[i]
            elif leaf_of[i] == hi:
                WR += w[i]
                SR += w[i] * r[i]
        lik = _lml(WL + WR, SL + SR, sigma2, tau2) - _lml(WL, SL, sigma2, tau2) - _lml(WR, SR, sigma2, tau2)
        prior = _log_nosplit(d, eta, beta) - _log_split(d, eta, beta) - 2.0 * _log_nosplit(d + 1, eta, beta)
        pg_after = 1.0 if node == 0 else probs[0]
        trans = math.log(pg_after / (nl - 1)) - math.log(pp / prunable.shape[0])
        if math.log(u[4]) >= lik + prior + trans:
            return move, False, nl
        for i in range(n):
            if leaf_of[i] == lo or leaf_of[i] == hi:
                leaf_of[i] = node
        alive[lo] = False
        alive[hi] = False
        var[node] = LEAF
        cut[node] = 0.0
        left[node] = LEAF
        right[node] = LEAF
        return move, True, nl - 1

    # CHANGE
    node = internal[_pick(u[1], internal.shape[0])]
    cap = var.shape[0]
    in_sub = np.zeros(cap, np.bool_)
    stack = np.empty(cap, np.int64)
    top = 0
    stack[0] = node
    top = 1
    while top > 0:
        top -= 1
        k = stack[top]
        if var[k] == LEAF:
            in_sub[k] = True
        else:
            stack[top] = left[k]
            stack[top + 1] = right[k]
            top += 2
    cnt = 0
    for i in range(n):
        if in_sub[leaf_of[i]]:
            cnt += 1
    rows = np.empty(cnt, np.int64)
    cnt = 0
    for i in range(n):
        if in_sub[leaf_of[i]]:
            rows[cnt] = i
            cnt += 1
    v, c = _draw_rule(ranks, uvals, n_unique, rows, u[2], u[3])
    if v < 0 or (v == var[node] and c == cut[node]):
        return move, False, nl
    new_leaf = np.empty(rows.shape[0], np.int64)
    W_old = np.zeros(cap)
    S_old = np.zeros(cap)
    W_new = np.zeros(cap)
    S_new = np.zeros(cap)
    for k in range(rows.shape[0]):
        i = rows[k]
        s = left[node] if X[i, v] <= c else right[node]
        while var[s] != LEAF:
            s = left[s] if X[i, var[s]] <= cut[s] else right[s]
        new_leaf[k] = s
        W_new[s] += w[i]
        S_new[s] += w[i] * r[i]
        W_old[leaf_of[i]] += w[i]
        S_old[leaf_of[i]] += w[i] * r[i]
    lik = 0.0
    for s in range(cap):
        if in_sub[s]:
            if W_new[s] <= 0.0:
                return move, False, nl
            lik += _lml(W_new[s], S_new[s], sigma2, tau2) - _lml(W_old[s], S_old[s], sigma2, tau2)
    if math.log(u[4]) >= lik:
        return move, False, nl
    var[node] = v
    cut[node] = c
    for k in range(rows.shape[0]):
        leaf_of[rows[k]] = new_leaf[k]
    return move, True, nl


@njit(cache=True)
def draw_leaves(leaf_of, w, r, var, alive, mu, normals, sigma2, tau2, fit, total):
    """Gibbs draw of every leaf value; refreshes this tree's fit and the total.

    Leaves are visited in slot order, consuming one standard normal each.
    """
    cap = var.shape[0]
    W = np.zeros(cap)
    S = np.zeros(cap)
    for i in range(leaf_of.shape[0]):
        W[leaf_of[i]] += w[i]
        S[leaf_of[i]] += w[i] * r[i]
    k = 0
    for s in range(cap):
        if alive[s] and var[s] == LEAF:
            prec = 1.0 / tau2 + W[s] / sigma2
            mu[s] = (S[s] / sigma2) / prec + normals[k] / math.sqrt(prec)
            if not math.isfinite(mu[s]):
                return False
            k += 1
    for i in range(leaf_of.shape[0]):
        f = mu[leaf_of[i]]
        total[i] += f - fit[i]
        fit[i] = f
    return True


@njit(cache=True)
def compact(var, cut, left, right, mu):
    """Preorder renumbering of the live nodes reachable from slot 0."""
    cap = var.shape[0]
    order = np.empty(cap, np.int64)
    index = np.full(cap, -1, np.int64)
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    top = 1
    m = 0
    while top > 0:
        top -= 1
        k = stack[top]
        index[k] = m
        order[m] = k
        m += 1
        if var[k] != LEAF:
            stack[top] = right[k]
            stack[top + 1] = left[k]
            top += 2
    ovar = np.empty(m, np.int32)
    ocut = np.zeros(m)
    oleft = np.full(m, LEAF, np.int32)
    oright = np.full(m, LEAF, np.int32)
    omu = np.zeros(m)
    for j in range(m):
        k = order[j]
        ovar[j] = var[k]
        if var[k] == LEAF:
            omu[j] = mu[k]
        else:
            ocut[j] = cut[k]
            oleft[j] = index[left[k]]
            oright[j] = index[right[k]]
    return ovar, ocut, oleft, oright, omu


@njit(cache=True)
def sweep(
    X, ranks, uvals, n_unique, z, w, leaf_of, var, cut, left, right, parent, depth, alive, mu, fits, total,
    U, N, probs, eta, beta, sigma2, tau2, max_depth, tried, accepted, n_alive,
):
    """Backfit every tree once. ``U`` holds five uniforms per tree and ``N``
    enough standard normals per tree for its leaves."""
    J = var.shape[0]
    n = z.shape[0]
    r = np.empty(n)
    for j in range(J):
        for i in range(n):
            r[i] = z[i] - total[i] + fits[j, i]
        move, ok, nl = tree_move(
            X, ranks, uvals, n_unique, r, w, leaf_of[j], var[j], cut[j], left[j], right[j], parent[j], depth[j],
            alive[j], U[j], probs, eta, beta, sigma2, tau2, max_depth,
        )
        tried[move] += 1
        if ok:
            accepted[move] += 1
            if move == GROW:
                n_alive[j] += 2
            elif move == PRUNE:
                n_alive[j] -= 2
        if not draw_leaves(leaf_of[j], w, r, var[j], alive[j], mu[j], N[j], sigma2, tau2, fits[j], total):
            return False
    return True


@njit(cache=True)
def predict_draws(X, var, cut, left, right, mu, offsets, draw_start, out):
    """Sum-of-trees value of every draw at every row.

    Draw ``d`` owns trees ``draw_start[d]:draw_start[d + 1]`` of the packed
    arrays; ``offsets`` gives each tree's root slot.
    """
    m = X.shape[0]
    for d in range(draw_start.shape[0] - 1):
        for t in range(draw_start[d], draw_start[d + 1]):
            root = offsets[t]
            for i in range(m):
                k = root
                while var[k] != LEAF:
                    k = left[k] if X[i, var[k]] <= cut[k] else right[k]
                out[d, i] += mu[k]


@njit(cache=True)
def compact_all(var, cut, left, right, mu):
    """Compact every tree (one per row) and pack them with global child indices."""
    J = var.shape[0]
    sizes = np.empty(J, np.int64)
    parts = []
    for j in range(J):
        part = compact(var[j], cut[j], left[j], right[j], mu[j])
        sizes[j] = part[0].shape[0]
        parts.append(part)
    offsets = np.zeros(J + 1, np.int64)
    for j in range(J):
        offsets[j + 1] = offsets[j] + sizes[j]
    total = offsets[J]
    ovar = np.empty(total, np.int32)
    ocut = np.empty(total)
    oleft = np.empty(total, np.int64)
    oright = np.empty(total, np.int64)
    omu = np.empty(total)
    for j in range(J):
        pv, pc, pl, pr, pm = parts[j]
        b = offsets[j]
        for k in range(sizes[j]):
            ovar[b + k] = pv[k]
            ocut[b + k] = pc[k]
            omu[b + k] = pm[k]
            oleft[b + k] = LEAF if pl[k] == LEAF else pl[k] + b
            oright[b + k] = LEAF if pr[k] == LEAF else pr[k] + b
    return ovar, ocut, oleft, oright, omu, offsets
