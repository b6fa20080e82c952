"""Hot numeric kernels.

Everything here sticks to the subset of numpy that numba compiles, so the same
source serves as the compiled path and as the pure-numpy fallback (see
:mod:`bwk._accel`). Both paths draw from the caller's ``numpy.random.Generator``
in the same order, so traces agree bit for bit across the two modes.
"""

import math

import numpy as np

from ._accel import jit

# outcome model kind codes shared with bwk.model
KIND_NULL = 0
KIND_DETERMINISTIC = 1
KIND_BERNOULLI = 2
KIND_SCALED = 3
KIND_ATOM_SUM = 4
KIND_BERNOULLI_REWARD = 5

# simplex status codes
LP_OPTIMAL = 0
LP_INFEASIBLE = 1
LP_ITERATION_LIMIT = 2

# stop codes for the fused simulation loop
STOP_HORIZON = 0
STOP_BUDGET = 1
STOP_ROUND_CAP = 2

PIVOT_TOL = 1e-12
COST_TOL = 1e-11


@jit
def _pivot(tab, obj, row, col):
    piv = tab[row, col]
    tab[row, :] = tab[row, :] / piv
    for i in range(tab.shape[0]):
        if i != row:
            f = tab[i, col]
            if f != 0.0:
                tab[i, :] = tab[i, :] - f * tab[row, :]
    f = obj[col]
    if f != 0.0:
        obj[:] = obj[:] - f * tab[row, :]


@jit
def _bland_iterations(tab, obj, basis, n_enter, max_iter):
    """Primal simplex on a max problem whose reduced costs live in ``obj``.

    Only columns ``< n_enter`` may enter. Entering column is the lowest index
    with a negative reduced cost; the leaving row minimises the ratio with ties
    going to the lowest basic-variable index. Returns False on iteration limit.
    """
    rows = tab.shape[0]
    rhs = tab.shape[1] - 1
    for _ in range(max_iter):
        col = -1
        for j in range(n_enter):
            if obj[j] < -COST_TOL:
                col = j
                break
        if col < 0:
            return True
        row = -1
        best = np.inf
        for i in range(rows):
            a = tab[i, col]
            if a > PIVOT_TOL:
                ratio = tab[i, rhs] / a
                if ratio < best - 1e-14 or (abs(ratio - best) <= 1e-14 and basis[i] < basis[row]):
                    best = ratio
                    row = i
        if row < 0:
            # unbounded cannot happen: the simplex row bounds every column
            return False
        _pivot(tab, obj, row, col)
        basis[row] = col
    return False


@jit
def simplex_solve(c, A, b):
    """Maximise ``c @ x`` s.t. ``A @ x <= b``, ``sum(x) == 1``, ``x >= 0``.

    ``b`` must be nonnegative. Two-phase tableau simplex with Bland's rule.

    Returns ``(status, x, value, y, mu, degenerate, alt_optima, basis)`` where
    ``y`` are the multipliers of the inequality rows, ``mu`` the multiplier of
    the simplex row, ``degenerate`` flags a basic variable at zero (the dual may
    then be non-unique) and ``alt_optima`` flags a nonbasic column with zero
    reduced cost (the primal may then be non-unique).
    """
    m, n = A.shape
    ncol = n + m + 1  # structural, slacks, artificial
    art = n + m
    tab = np.zeros((m + 1, ncol + 1))
    tab[:m, :n] = A
    for i in range(m):
        tab[i, n + i] = 1.0
        tab[i, ncol] = b[i]
    tab[m, :n] = 1.0
    tab[m, art] = 1.0
    tab[m, ncol] = 1.0
    basis = np.empty(m + 1, dtype=np.int64)
    for i in range(m):
        basis[i] = n + i
    basis[m] = art

    x = np.zeros(n)
    y = np.zeros(m)
    max_iter = 50 * (ncol + 1)

    # phase 1: maximise -artificial
    obj = np.zeros(ncol + 1)
    obj[:] = -tab[m, :]
    obj[art] = 0.0
    if not _bland_iterations(tab, obj, basis, ncol, max_iter):
        return LP_ITERATION_LIMIT, x, 0.0, y, 0.0, False, False, basis
    if obj[ncol] < -1e-9:
        return LP_INFEASIBLE, x, 0.0, y, 0.0, False, False, basis
    for i in range(m + 1):
        if basis[i] == art:
            for j in range(n + m):
                if abs(tab[i, j]) > 1e-9:
                    _pivot(tab, obj, i, j)
                    basis[i] = j
                    break

    # phase 2
    obj[:] = 0.0
    for j in range(n):
        obj[j] = -c[j]
    for i in range(m + 1):
        k = basis[i]
        if k < n and c[k] != 0.0:
            obj[:] = obj[:] + c[k] * tab[i, :]
    if not _bland_iterations(tab, obj, basis, n + m, max_iter):
        return LP_ITERATION_LIMIT, x, 0.0, y, 0.0, False, False, basis

    degenerate = False
    is_basic = np.zeros(ncol, dtype=np.bool_)
    for i in range(m + 1):
        k = basis[i]
        is_basic[k] = True
        v = tab[i, ncol]
        if v < 0.0:
            v = 0.0
        if k < n:
            x[k] = v
        if k != art and v <= 1e-9:
            degenerate = True
    alt = False
    for j in range(n + m):
        if not is_basic[j] and abs(obj[j]) <= 1e-9:
            alt = True
    for i in range(m):
        y[i] = obj[n + i]
    mu = obj[art]
    value = 0.0
    for j in range(n):
        value += c[j] * x[j]
    return LP_OPTIMAL, x, value, y, mu, degenerate, alt, basis


@jit
def f_rad(mu_hat, n, c_rad):
    """Confidence radius ``min(1, sqrt(c_rad*mu/max(1,n)) + c_rad/max(1,n))``."""
    nn = n if n > 1 else 1
    mu = mu_hat if mu_hat > 0.0 else 0.0
    r = math.sqrt(c_rad * mu / nn) + c_rad / nn
    return r if r < 1.0 else 1.0


@jit
def uniform_radii(counts, c_rad, null_index):
    K = counts.shape[0]
    out = np.empty(K)
    for a in range(K):
        out[a] = f_rad(1.0, counts[a], c_rad)
    if null_index >= 0:
        out[null_index] = 0.0
    return out


@jit
def optimistic_bounds(counts, reward_sums, cons_sums, c_rad, null_index, time_index, time_rate):
    """Per-quantity UCB on rewards and LCB on consumption.

    ``cons_sums`` is (K, d). Returns ``ucb`` (K,) and ``lcb`` (K, d); the time
    column is pinned to ``time_rate`` and the null arm to zero elsewhere.
    """
    K, d = cons_sums.shape
    ucb = np.empty(K)
    lcb = np.empty((K, d))
    for a in range(K):
        n = counts[a]
        nn = n if n > 1 else 1
        if a == null_index:
            ucb[a] = 0.0
            for j in range(d):
                lcb[a, j] = 0.0
        else:
            r_hat = reward_sums[a] / nn
            u = r_hat + f_rad(r_hat, n, c_rad)
            ucb[a] = 0.0 if u < 0.0 else (1.0 if u > 1.0 else u)
            for j in range(d):
                c_hat = cons_sums[a, j] / nn
                v = c_hat - f_rad(c_hat, n, c_rad)
                lcb[a, j] = 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)
        if time_index >= 0:
            lcb[a, time_index] = time_rate
    return ucb, lcb


@jit
def sample_index(x, u):
    """Inverse-CDF draw from distribution ``x`` with uniform ``u``."""
    acc = 0.0
    last = -1
    for a in range(x.shape[0]):
        if x[a] > 0.0:
            acc += x[a]
            last = a
            if u < acc:
                return a
    return last


@jit
def sample_outcome_into(kind, rparam, cparam, sprob, divisor, atom_index, atom_r, atom_c,
                        arm, time_index, time_rate, rng, cons_out):
    """Draw one outcome of ``arm``; consumption goes to ``cons_out``, reward returned.

    Draw order per kind: independent Bernoulli draws the reward then each
    non-time resource; Bernoulli-reward draws the reward only; scaled
    Bernoulli uses one shared draw; atom sums walk atoms in order, reward then
    resources for each atom.
    """
    d = cons_out.shape[0]
    k = kind[arm]
    reward = 0.0
    for j in range(d):
        cons_out[j] = 0.0
    if k == KIND_DETERMINISTIC:
        reward = rparam[arm]
        for j in range(d):
            if j != time_index:
                cons_out[j] = cparam[arm, j]
    elif k == KIND_BERNOULLI:
        reward = 1.0 if rng.random() < rparam[arm] else 0.0
        for j in range(d):
            if j != time_index:
                cons_out[j] = 1.0 if rng.random() < cparam[arm, j] else 0.0
    elif k == KIND_BERNOULLI_REWARD:
        reward = 1.0 if rng.random() < rparam[arm] else 0.0
        for j in range(d):
            if j != time_index:
                cons_out[j] = cparam[arm, j]
    elif k == KIND_SCALED:
        reward = rparam[arm]
        w = 1.0 if rng.random() < sprob[arm] else 0.0
        for j in range(d):
            if j != time_index:
                cons_out[j] = cparam[arm, j] * w / divisor[arm]
    elif k == KIND_ATOM_SUM:
        # rparam holds the atom scale 1/n; atom means are in [0, 1/n]
        scale = rparam[arm]
        for p in range(atom_index.shape[1]):
            at = atom_index[arm, p]
            if at < 0:
                break
            if rng.random() * scale < atom_r[at]:
                reward += scale
            for j in range(d):
                if j != time_index:
                    if rng.random() * scale < atom_c[at, j]:
                        cons_out[j] += scale
    if time_index >= 0:
        cons_out[time_index] = time_rate
    return reward


@jit
def clean_event_flag(ucb, lcb, radii, true_r, true_c, null_index, time_index):
    K, d = lcb.shape
    for a in range(K):
        if a == null_index:
            continue
        rad = radii[a]
        g = ucb[a] - true_r[a]
        if g < -1e-12 or g > rad + 1e-12:
            return False
        for j in range(d):
            if j == time_index:
                continue
            h = true_c[a, j] - lcb[a, j]
            if h < -1e-12 or h > rad + 1e-12:
                return False
    return True


@jit
def simulate_ucb(kind, rparam, cparam, sprob, divisor, atom_index, atom_r, atom_c,
                 true_r, true_c, null_index, time_index, budget, horizon, c_rad, eta,
                 pruned, relaxed, n_rounds, oracle_cap, record_radii, rng, fixed_x):
    """Fused UcbBwK / PrunedUcbBwK / fixed-distribution simulation loop.

    Mirrors ``bwk.simulator.run`` driving ``bwk.algorithms.UcbBwK`` step by
    step: same LP, same bounds, same draws. ``n_rounds`` is the round cap
    (``horizon`` for ordinary runs). ``relaxed`` disables budget stopping.
    A non-empty ``fixed_x`` skips the LP and plays that distribution.
    """
    fixed = fixed_x.shape[0] > 0
    K, d = cparam.shape
    time_rate = budget / horizon
    m = d - 1 if time_index >= 0 else d
    rows = np.empty(m, dtype=np.int64)
    q = 0
    for j in range(d):
        if j != time_index:
            rows[q] = j
            q += 1
    rhs = np.empty(m)
    for i in range(m):
        rhs[i] = time_rate * (1.0 - eta)

    counts = np.zeros(K, dtype=np.int64)
    reward_sums = np.zeros(K)
    cons_sums = np.zeros((K, d))
    used = np.zeros(d)

    xs = np.zeros((n_rounds, K))
    arms = np.full(n_rounds, -1, dtype=np.int64)
    rewards = np.zeros(n_rounds)
    cons = np.zeros((n_rounds, d))
    remaining = np.zeros((n_rounds, d))
    lp_values = np.zeros(n_rounds)
    calls = np.zeros(n_rounds, dtype=np.int64)
    clean = np.zeros(n_rounds, dtype=np.bool_)
    radii_out = np.zeros((n_rounds if record_radii else 0, K))

    A = np.empty((m, K))
    o = np.empty(d)
    total_calls = 0
    stop = STOP_ROUND_CAP if relaxed else STOP_HORIZON
    stop_res = -1
    t = 0
    capped = False
    while t < n_rounds:
        radii = uniform_radii(counts, c_rad, null_index)
        if capped:
            x = np.zeros(K)
            x[null_index] = 1.0
            arm = null_index
            val = 0.0
            ncalls = 0
            cl = clean[t - 1] if t > 0 else True
        else:
            ucb, lcb = optimistic_bounds(counts, reward_sums, cons_sums, c_rad,
                                         null_index, time_index, time_rate)
            cl = clean_event_flag(ucb, lcb, radii, true_r, true_c, null_index, time_index)
            if not fixed:
                for i in range(m):
                    for a in range(K):
                        A[i, a] = lcb[a, rows[i]]
                status, xlp, val, y, mu, dg, alt, basis = simplex_solve(ucb, A, rhs)
            if fixed:
                x = fixed_x
                arm = sample_index(x, rng.random())
                val = 0.0
                ncalls = 1
            elif pruned:
                p_null = xlp[null_index]
                p_real = 1.0 - p_null
                if p_real <= 1e-15:
                    # the LP never changes while only null is drawn: the cap binds
                    ncalls = oracle_cap - total_calls
                    arm = null_index
                    capped = True
                else:
                    if p_null > 0.0:
                        u = rng.random()
                        extra = math.floor(math.log1p(-u) / math.log(p_null))
                    else:
                        extra = 0
                    if total_calls + extra + 1 > oracle_cap:
                        ncalls = oracle_cap - total_calls
                        arm = null_index
                        capped = True
                    else:
                        ncalls = int(extra) + 1
                        cond = xlp.copy()
                        cond[null_index] = 0.0
                        cond = cond / p_real
                        arm = sample_index(cond, rng.random())
                        counts[null_index] += ncalls - 1
                x = xlp.copy()
                if not capped:
                    x[null_index] = 0.0
                    x = x / p_real
                else:
                    x = np.zeros(K)
                    x[null_index] = 1.0
            else:
                x = xlp
                arm = sample_index(x, rng.random())
                ncalls = 1
        total_calls += ncalls
        r = sample_outcome_into(kind, rparam, cparam, sprob, divisor, atom_index, atom_r, atom_c,
                                arm, time_index, time_rate, rng, o)
        counts[arm] += 1
        reward_sums[arm] += r
        for j in range(d):
            cons_sums[arm, j] += o[j]
            used[j] += o[j]
        xs[t, :] = x
        arms[t] = arm
        rewards[t] = r
        cons[t, :] = o
        for j in range(d):
            remaining[t, j] = budget - used[j]
        lp_values[t] = val
        calls[t] = ncalls
        clean[t] = cl
        if record_radii:
            radii_out[t, :] = radii
        t += 1
        if not relaxed:
            hit = -1
            for j in range(d):
                if used[j] >= budget * (1.0 - 1e-12):
                    if j != time_index:
                        hit = j
                        break
                    elif hit < 0:
                        hit = j
            if hit >= 0:
                if hit == time_index and t == horizon:
                    stop = STOP_HORIZON
                else:
                    stop = STOP_BUDGET
                    stop_res = hit
                break
    return (t, stop, stop_res, xs[:t], arms[:t], rewards[:t], cons[:t], remaining[:t],
            lp_values[:t], calls[:t], clean[:t], radii_out[:t] if record_radii else radii_out,
            total_calls, capped)
