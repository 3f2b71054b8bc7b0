"""Hot loops of the planner: expected grasp rewards and the subset value DP.

Planning states are bitmasks over the ``n`` objects the planner may still
grasp (bit set = object present). Both kernels come in two flavours with the
same arithmetic order, a numba one and a vectorized numpy one; ``reward_table``
and ``solve_values`` dispatch according to :mod:`stackgrasp._accel`.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# Strict-improvement margin for argmax; smaller gaps count as ties.
TIE_EPS = 1e-12
MAX_PLAN_OBJECTS = 20


def tanh_table(m: int) -> np.ndarray:
    return np.array([math.tanh(k) for k in range(m + 1)], dtype=np.float64)


def _count_reward(p_nc, p_oc, p_np, tanh_k, base, nc_gain, oc_gain, np_penalty):
    """Expected relation reward for one grasp given independent pair factors.

    ``p_nc[j]``, ``p_oc[j]``, ``p_np[j]``: probability that partner ``j`` is a
    natural child, ordinary child, natural parent of the grasped object. The
    branches are first-match: natural children, then ordinary children, then
    natural parents.
    """
    m = p_nc.shape[0]
    dist = np.zeros(m + 1)
    dist[0] = 1.0
    for j in range(m):
        p = p_nc[j]
        for k in range(j, -1, -1):
            dist[k + 1] = dist[k + 1] + dist[k] * p
            dist[k] = dist[k] * (1.0 - p)
    s_nc = 0.0
    for k in range(1, m + 1):
        s_nc = s_nc + dist[k] * (nc_gain * tanh_k[k])
    dist_oc = np.zeros(m + 1)
    dist_oc[0] = 1.0
    none_np = 1.0
    for j in range(m):
        rest = 1.0 - p_nc[j]
        q = p_oc[j] / rest if rest > 0.0 else 0.0
        for k in range(j, -1, -1):
            dist_oc[k + 1] = dist_oc[k + 1] + dist_oc[k] * q
            dist_oc[k] = dist_oc[k] * (1.0 - q)
        rest2 = rest - p_oc[j]
        r = p_np[j] / rest2 if rest2 > 0.0 else 0.0
        none_np = none_np * (1.0 - r)
    s_oc = 0.0
    for k in range(1, m + 1):
        s_oc = s_oc + dist_oc[k] * (oc_gain * tanh_k[k])
    s_np = np_penalty * (1.0 - none_np)
    return base + s_nc + dist[0] * (s_oc + dist_oc[0] * s_np)


def expected_count_reward(p_nc, p_oc, p_np, base, nc_gain, oc_gain, np_penalty) -> float:
    p_nc = np.asarray(p_nc, dtype=np.float64)
    tk = tanh_table(p_nc.shape[0])
    return float(
        _count_reward(
            p_nc,
            np.asarray(p_oc, dtype=np.float64),
            np.asarray(p_np, dtype=np.float64),
            tk,
            float(base),
            float(nc_gain),
            float(oc_gain),
            float(np_penalty),
        )
    )


# --------------------------------------------------------------------------
# numpy flavour


def _mask_bits(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.float64)


def _reward_table_numpy(n, P_nc, P_oc, P_np, tanh_k, base, nc_gain, oc_gain, np_penalty):
    M = 1 << n
    m = P_nc.shape[1]
    present = np.ones((M, m))
    if n:
        present[:, :n] = _mask_bits(n)
    out = np.zeros((n, M))
    for o in range(n):
        a_nc = present * P_nc[o]
        a_oc = present * P_oc[o]
        a_np = present * P_np[o]
        dist = np.zeros((m + 1, M))
        dist[0] = 1.0
        for j in range(m):
            p = a_nc[:, j]
            for k in range(j, -1, -1):
                dist[k + 1] = dist[k + 1] + dist[k] * p
                dist[k] = dist[k] * (1.0 - p)
        s_nc = np.zeros(M)
        for k in range(1, m + 1):
            s_nc = s_nc + dist[k] * (nc_gain * tanh_k[k])
        dist_oc = np.zeros((m + 1, M))
        dist_oc[0] = 1.0
        none_np = np.ones(M)
        for j in range(m):
            rest = 1.0 - a_nc[:, j]
            safe = np.where(rest > 0.0, rest, 1.0)
            q = np.where(rest > 0.0, a_oc[:, j] / safe, 0.0)
            for k in range(j, -1, -1):
                dist_oc[k + 1] = dist_oc[k + 1] + dist_oc[k] * q
                dist_oc[k] = dist_oc[k] * (1.0 - q)
            rest2 = rest - a_oc[:, j]
            safe2 = np.where(rest2 > 0.0, rest2, 1.0)
            r = np.where(rest2 > 0.0, a_np[:, j] / safe2, 0.0)
            none_np = none_np * (1.0 - r)
        s_oc = np.zeros(M)
        for k in range(1, m + 1):
            s_oc = s_oc + dist_oc[k] * (oc_gain * tanh_k[k])
        s_np = np_penalty * (1.0 - none_np)
        val = base + s_nc + dist[0] * (s_oc + dist_oc[0] * s_np)
        has_o = (np.arange(M) >> o) & 1
        out[o] = np.where(has_o == 1, val, 0.0)
    return out


def _solve_numpy(n, horizon, er, closure, desc, ochild, succ, gamma,
                 order, is_target, target_mask, group_members, group_scope):
    M = 1 << n
    masks = np.arange(M, dtype=np.int64)
    V = np.zeros((horizon + 1, M))
    A = np.full((horizon + 1, M), -1, dtype=np.int32)
    n_groups = group_members.shape[0]
    active = np.full(M, -1, dtype=np.int64)
    for g in range(n_groups - 1, -1, -1):
        active = np.where((masks & group_members[g]) != 0, g, active)
    done = (masks & target_mask) == 0
    scope = np.zeros(M, dtype=np.int64)
    members = np.zeros(M, dtype=np.int64)
    for g in range(n_groups):
        scope = np.where(active == g, group_scope[g], scope)
        members = np.where(active == g, group_members[g], members)
    for h in range(1, horizon + 1):
        prev = V[h - 1]
        best = np.full(M, -np.inf)
        act = np.full(M, -1, dtype=np.int32)
        for o in order:
            bit = np.int64(1) << np.int64(o)
            legal = ((masks & bit) != 0) & ~done & ((masks & ochild[o]) == 0)
            if is_target[o]:
                legal &= (members & bit) != 0
                legal &= (masks & desc[o] & ~target_mask) == 0
            else:
                legal &= (scope & bit) != 0
                legal &= (masks & closure[o] & target_mask) == 0
            p = succ[o]
            q = er[o] + gamma * (p * prev[masks & ~closure[o]] + (1.0 - p) * prev)
            better = legal & (q > best + TIE_EPS)
            best = np.where(better, q, best)
            act = np.where(better, o, act)
        V[h] = np.where(act >= 0, best, 0.0)
        A[h] = act
    return V, A


# --------------------------------------------------------------------------
# numba flavour

if HAVE_NUMBA:
    _count_reward_nb = njit(_count_reward)

    @njit
    def _reward_table_numba(n, P_nc, P_oc, P_np, tanh_k, base, nc_gain, oc_gain, np_penalty):
        M = 1 << n
        m = P_nc.shape[1]
        out = np.zeros((n, M))
        a_nc = np.empty(m)
        a_oc = np.empty(m)
        a_np = np.empty(m)
        for o in range(n):
            for mask in range(M):
                if (mask >> o) & 1 == 0:
                    continue
                for j in range(m):
                    pres = 1.0
                    if j < n and (mask >> j) & 1 == 0:
                        pres = 0.0
                    a_nc[j] = pres * P_nc[o, j]
                    a_oc[j] = pres * P_oc[o, j]
                    a_np[j] = pres * P_np[o, j]
                out[o, mask] = _count_reward_nb(
                    a_nc, a_oc, a_np, tanh_k, base, nc_gain, oc_gain, np_penalty
                )
        return out

    @njit
    def _solve_numba(n, horizon, er, closure, desc, ochild, succ, gamma,
                     order, is_target, target_mask, group_members, group_scope):
        M = 1 << n
        V = np.zeros((horizon + 1, M))
        A = np.full((horizon + 1, M), -1, dtype=np.int32)
        n_groups = group_members.shape[0]
        act_group = np.full(M, -1, dtype=np.int64)
        for mask in range(M):
            for g in range(n_groups):
                if mask & group_members[g] != 0:
                    act_group[mask] = g
                    break
        for h in range(1, horizon + 1):
            for mask in range(M):
                if mask & target_mask == 0:
                    continue
                g = act_group[mask]
                if g < 0:
                    continue
                members = group_members[g]
                scope = group_scope[g]
                best = -np.inf
                act = -1
                for idx in range(order.shape[0]):
                    o = order[idx]
                    bit = np.int64(1) << np.int64(o)
                    if mask & bit == 0 or mask & ochild[o] != 0:
                        continue
                    if is_target[o]:
                        if members & bit == 0 or mask & desc[o] & ~target_mask != 0:
                            continue
                    else:
                        if scope & bit == 0 or mask & closure[o] & target_mask != 0:
                            continue
                    p = succ[o]
                    q = er[o, mask] + gamma * (
                        p * V[h - 1, mask & ~closure[o]] + (1.0 - p) * V[h - 1, mask]
                    )
                    if q > best + TIE_EPS:
                        best = q
                        act = o
                if act >= 0:
                    V[h, mask] = best
                    A[h, mask] = act
        return V, A


def _want_numba(flag):
    return USE_NUMBA if flag is None else bool(flag) and HAVE_NUMBA


def reward_table(n, P_nc, P_oc, P_np, base, nc_gain, oc_gain, np_penalty, use_numba=None):
    """Expected grasp reward ``er[o, mask]`` for every object and presence mask.

    ``P_*`` have shape ``(n, m)``: columns ``< n`` follow the mask bits, the
    rest are partners that stay present throughout.
    """
    if n > MAX_PLAN_OBJECTS:
        raise ValueError(f"{n} objects exceed the exact-lookahead limit of {MAX_PLAN_OBJECTS}")
    m = P_nc.shape[1]
    args = (
        int(n),
        np.ascontiguousarray(P_nc, dtype=np.float64),
        np.ascontiguousarray(P_oc, dtype=np.float64),
        np.ascontiguousarray(P_np, dtype=np.float64),
        tanh_table(m),
        float(base),
        float(nc_gain),
        float(oc_gain),
        float(np_penalty),
    )
    if _want_numba(use_numba):
        return _reward_table_numba(*args)
    return _reward_table_numpy(*args)


def solve_values(n, horizon, er, closure, desc, ochild, succ, gamma, order, is_target,
                 target_mask, group_members, group_scope, use_numba=None):
    """Finite-horizon expectimax over presence masks.

    Returns ``(V, A)`` of shape ``(horizon + 1, 2**n)``: the optimal value and
    the chosen object (``-1`` = report) with ``h`` steps to go. Task-complete
    masks and the horizon boundary have value 0.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n > MAX_PLAN_OBJECTS:
        raise ValueError(f"{n} objects exceed the exact-lookahead limit of {MAX_PLAN_OBJECTS}")
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
    args = (
        int(n),
        int(horizon),
        np.ascontiguousarray(er, dtype=np.float64),
        i64(closure),
        i64(desc),
        i64(ochild),
        np.ascontiguousarray(succ, dtype=np.float64),
        float(gamma),
        i64(order),
        np.ascontiguousarray(is_target, dtype=np.bool_),
        np.int64(target_mask),
        i64(group_members),
        i64(group_scope),
    )
    if _want_numba(use_numba):
        return _solve_numba(*args)
    return _solve_numpy(*args)
