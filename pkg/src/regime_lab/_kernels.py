"""Numba kernels: rate bytecode interpreter, direct-method SSA, Euler-Maruyama.

The kernels never draw random numbers themselves. Callers hand in chunks of
uniforms (SSA) or standard normals (EM) from a keyed counter-based
generator; when a chunk runs out the kernel returns ``NEED_RANDOM`` with its
state saved in the passed arrays, and is re-entered with a fresh chunk. This
keeps runs bit-reproducible regardless of chunk boundaries and threading.
"""

import math

import numpy as np
from numba import njit

DONE = 0
NEED_RANDOM = 1
ZERO_RATE = 2
BUDGET = 3
LEFT_ORTHANT = 4
BLOWUP = 5


@njit(cache=True, nogil=True)
def eval_program(ops, args, consts, start, length, cstart, x, stack):
    sp = 0
    for p in range(start, start + length):
        op = ops[p]
        if op == 0:
            stack[sp] = consts[cstart + args[p]]
            sp += 1
        elif op == 1:
            stack[sp] = x[args[p]]
            sp += 1
        elif op == 7:
            if stack[sp - 1] < 0.0:
                stack[sp - 1] = 0.0
        elif op == 8:
            stack[sp - 1] = -stack[sp - 1]
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == 2:
                stack[sp - 1] = a + b
            elif op == 3:
                stack[sp - 1] = a - b
            elif op == 4:
                stack[sp - 1] = a * b
            elif op == 5:
                stack[sp - 1] = a if a < b else b
            else:
                stack[sp - 1] = a if a > b else b
    return stack[0]


@njit(cache=True, nogil=True)
def eval_rates(ops, args, consts, starts, lens, cstarts, k, x, stack, out):
    total = 0.0
    for j in range(out.shape[0]):
        r = eval_program(ops, args, consts, starts[k, j], lens[k, j], cstarts[k, j], x, stack)
        if r < 0.0:
            r = 0.0
        out[j] = r
        total += r
    return total


@njit(cache=True, nogil=True)
def _monomials(xh, powers, out):
    for f in range(powers.shape[0]):
        v = 1.0
        for i in range(powers.shape[1]):
            for _ in range(powers[f, i]):
                v *= xh[i]
        out[f] = v


@njit(cache=True, nogil=True)
def _accumulate(t0, t1, t_burn, batch_len, nb, mon, k, acc, occ):
    # add mon * |[t0, t1] cut with each batch| after burn-in
    if t1 <= t_burn:
        return
    if t0 < t_burn:
        t0 = t_burn
    b = int((t0 - t_burn) / batch_len)
    while b < nb and t0 < t1:
        edge = t_burn + (b + 1) * batch_len
        seg_end = t1 if t1 < edge else edge
        w = seg_end - t0
        if w > 0.0:
            for f in range(mon.shape[0]):
                acc[b, f] += w * mon[f]
            occ[b, k] += w
        t0 = seg_end
        b += 1


@njit(cache=True, nogil=True)
def ssa_run(x, istate, fstate, jumps, ops, args, consts, starts, lens, cstarts, stack_size,
            qn, x_star, h, t_burn, t_end, batch_len, powers, acc, occ,
            hist_lo, hist, up, down, uniforms, upos, max_events, check_orthant):
    """Advance the joint chain until ``t_end``, budget, or uniforms run out.

    ``istate = [k, x_events, j_events]``, ``fstate = [t]``. Returns
    ``(status, upos)``.
    """
    d = x.shape[0]
    J = jumps.shape[0]
    K = qn.shape[0]
    nb = acc.shape[0]
    stack = np.empty(stack_size)
    rates = np.empty(J)
    xf = np.empty(d)
    xh = np.empty(d)
    mon = np.empty(powers.shape[0])
    nhist = hist.shape[0]
    k = istate[0]
    t = fstate[0]
    nu = uniforms.shape[0]
    while True:
        if upos + 2 > nu:
            istate[0] = k
            fstate[0] = t
            return NEED_RANDOM, upos
        if istate[1] + istate[2] >= max_events:
            istate[0] = k
            fstate[0] = t
            return BUDGET, upos
        for i in range(d):
            xf[i] = x[i]
            xh[i] = (x[i] - x_star[i]) * h
        xrate = eval_rates(ops, args, consts, starts, lens, cstarts, k, xf, stack, rates)
        jrate = 0.0
        for l in range(K):
            if l != k:
                jrate += qn[k, l]
        total = xrate + jrate
        if not total > 0.0:
            istate[0] = k
            fstate[0] = t
            return ZERO_RATE, upos
        u1 = uniforms[upos]
        u2 = uniforms[upos + 1]
        upos += 2
        tau = -math.log(1.0 - u1) / total
        t_next = t + tau
        stop = t_next >= t_end
        if stop:
            t_next = t_end
        _monomials(xh, powers, mon)
        _accumulate(t, t_next, t_burn, batch_len, nb, mon, k, acc, occ)
        after_burn = t_next > t_burn
        if nhist > 0 and after_burn:
            w0 = t if t > t_burn else t_burn
            idx = x[0] - hist_lo
            if 0 <= idx < nhist:
                hist[idx] += t_next - w0
        if stop:
            istate[0] = k
            fstate[0] = t_end
            return DONE, upos
        t = t_next
        target = u2 * total
        if target < xrate:
            acc_r = 0.0
            sel = J - 1
            for j in range(J):
                acc_r += rates[j]
                if target < acc_r:
                    sel = j
                    break
            while rates[sel] == 0.0 and sel > 0:
                sel -= 1
            if nhist > 0 and after_burn:
                idx = x[0] - hist_lo
                if 0 <= idx < nhist:
                    if jumps[sel, 0] > 0:
                        up[idx] += 1
                    elif jumps[sel, 0] < 0:
                        down[idx] += 1
            for i in range(d):
                x[i] += jumps[sel, i]
            istate[1] += 1
            if check_orthant:
                for i in range(d):
                    if x[i] < 0:
                        istate[0] = k
                        fstate[0] = t
                        return LEFT_ORTHANT, upos
        else:
            target -= xrate
            acc_r = 0.0
            nxt = k
            for l in range(K):
                if l != k:
                    acc_r += qn[k, l]
                    nxt = l
                    if target < acc_r:
                        break
            k = nxt
            istate[2] += 1


@njit(cache=True, nogil=True)
def averaged_drift_scaled(y, pi, jumps, ops, args, consts, starts, lens, cstarts, stack,
                          rates, xf, nb, x_star, out):
    """``bbar(y) = n^-beta sum_k pi_k Xi(n^beta y + x*, k)`` into ``out``."""
    d = y.shape[0]
    J = jumps.shape[0]
    for i in range(d):
        out[i] = 0.0
        xf[i] = nb * y[i] + x_star[i]
    for k in range(pi.shape[0]):
        eval_rates(ops, args, consts, starts, lens, cstarts, k, xf, stack, rates)
        for j in range(J):
            w = pi[k] * rates[j] / nb
            for i in range(d):
                out[i] += w * jumps[j, i]


@njit(cache=True, nogil=True)
def em_run(y, istate, pi, jumps, ops, args, consts, starts, lens, cstarts, stack_size,
           nb, x_star, sigma, dt, steps, burn_steps, batch_steps, powers, acc, normals, npos):
    """Euler-Maruyama from step ``istate[0]`` to ``steps``; batch sums into ``acc``."""
    d = y.shape[0]
    J = jumps.shape[0]
    stack = np.empty(stack_size)
    rates = np.empty(J)
    xf = np.empty(d)
    b = np.empty(d)
    mon = np.empty(powers.shape[0])
    sq = math.sqrt(dt)
    nbatch = acc.shape[0]
    m = istate[0]
    nn = normals.shape[0]
    while m < steps:
        if npos + d > nn:
            istate[0] = m
            return NEED_RANDOM, npos
        if m >= burn_steps:
            bi = (m - burn_steps) // batch_steps
            if bi < nbatch:
                _monomials(y, powers, mon)
                for f in range(mon.shape[0]):
                    acc[bi, f] += mon[f] * dt
        averaged_drift_scaled(y, pi, jumps, ops, args, consts, starts, lens, cstarts,
                              stack, rates, xf, nb, x_star, b)
        for i in range(d):
            noise = 0.0
            for j in range(d):
                noise += sigma[i, j] * normals[npos + j]
            y[i] = y[i] + b[i] * dt + sq * noise
        npos += d
        for i in range(d):
            if not abs(y[i]) <= 1e8:
                istate[0] = m
                return BLOWUP, npos
        m += 1
    istate[0] = m
    return DONE, npos
