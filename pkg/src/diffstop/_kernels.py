"""Compiled stepping kernel for affine-coefficient problems.

The per-path state machine below mirrors the numpy engine in
montecarlo.py operation for operation (same formulas, same draw
consumption), just as a scalar loop; it exists purely because the
fixture-scale Monte-Carlo budgets need it.
"""

import numba
import numpy as np

RUNNING, STOPPED, ABSORBED_OUT, DEAD, TIMEOUT = 0, 1, 2, 3, 4


@numba.njit(cache=True, nogil=True)
def run_chunk(x, lam, integ, state, alive,
              z, u, dt, sqdt,
              b0, b1, s0, s1, r0, r1,
              edges_flat, edges_off,
              lows_flat, highs_flat, ivs_off,
              tlev_flat, tnext_flat, tr_off,
              imm_flags,
              has_h, h0, h1, hv_prev,
              bridge, abs_left, alpha, abs_right, beta,
              discount_dead,
              out_code, out_pos, out_lam, out_int, idx):
    n, take = z.shape
    for i in range(n):
        if not alive[i]:
            continue
        xi = x[i]
        li = lam[i]
        ii = integ[i]
        si = state[i]
        hp = hv_prev[i] if has_h else 0.0
        for j in range(take):
            b = b0 + b1 * xi
            s = s0 + s1 * xi
            r = r0 + r1 * xi
            xn = xi + b * dt + s * sqdt * z[i, j]

            # first stop edge crossed along the step (edges at the exact
            # start point do not count)
            e_lo = edges_off[si]
            e_hi = edges_off[si + 1]
            hit = False
            pos = xn
            theta = 1.0
            e_up = np.inf
            e_dn = -np.inf
            for k in range(e_lo, e_hi):
                e = edges_flat[k]
                if e > xi:
                    e_up = e
                    break
            for k in range(e_hi - 1, e_lo - 1, -1):
                e = edges_flat[k]
                if e < xi:
                    e_dn = e
                    break
            if xn >= e_up:
                hit = True
                pos = e_up
            elif xn <= e_dn:
                hit = True
                pos = e_dn
            if hit:
                denom = abs(xn - xi)
                if denom > 1e-300:
                    theta = abs(pos - xi) / denom
                    if theta > 1.0:
                        theta = 1.0
                else:
                    theta = 0.5
            elif bridge:
                s2dt = s * s * dt
                if s2dt < 1e-300:
                    s2dt = 1e-300
                p_up = 0.0
                p_dn = 0.0
                if e_up < np.inf:
                    a_up = (e_up - xi) * (e_up - xn)
                    if a_up < 13.9 * s2dt:
                        p_up = np.exp(-2.0 * a_up / s2dt)
                if e_dn > -np.inf:
                    a_dn = (xi - e_dn) * (xn - e_dn)
                    if a_dn < 13.9 * s2dt:
                        p_dn = np.exp(-2.0 * a_dn / s2dt)
                uu = u[i, j]
                if uu < p_up:
                    hit = True
                    pos = e_up
                    theta = 0.5
                elif uu < p_up + p_dn:
                    hit = True
                    pos = e_dn
                    theta = 0.5

            absorbed = False
            if not hit:
                if abs_left and xn <= alpha:
                    absorbed = True
                    xn = alpha
                    pos = alpha
                elif abs_right and xn >= beta:
                    absorbed = True
                    xn = beta
                    pos = beta

            lam_stop = li + theta * r * dt
            r_next = r0 + r1 * xn
            lam_full = li + 0.5 * (r + r_next) * dt

            terminal = False
            if hit:
                # pasted transition at the stop level?
                t_lo = tr_off[si]
                t_hi = tr_off[si + 1]
                nxt = -1
                for k in range(t_lo, t_hi):
                    lv = tlev_flat[k]
                    tolr = 1e-9 * (1.0 if abs(pos) < 1.0 else abs(pos))
                    if abs(lv - pos) <= tolr:
                        nxt = tnext_flat[k]
                        break
                if nxt >= 0 and not imm_flags[nxt]:
                    si = nxt
                    xn = pos
                    lam_full = lam_stop
                else:
                    terminal = True
                    xn = pos
            lam_new = lam_stop if hit else lam_full

            if has_h:
                hv = (h0 + h1 * xn) * np.exp(-lam_new)
                w = theta * dt if hit else dt
                ii += 0.5 * (hp + hv) * w
                hp = hv

            if terminal:
                out_code[idx[i]] = STOPPED
                out_pos[idx[i]] = pos
                out_lam[idx[i]] = lam_stop
                out_int[idx[i]] = ii
                alive[i] = False
                break
            if absorbed:
                # inside the stopping set at the endpoint?
                inside = False
                for k in range(ivs_off[si], ivs_off[si + 1]):
                    if lows_flat[k] <= xn <= highs_flat[k]:
                        inside = True
                        break
                out_code[idx[i]] = STOPPED if inside else ABSORBED_OUT
                out_pos[idx[i]] = xn
                out_lam[idx[i]] = lam_full
                out_int[idx[i]] = ii
                alive[i] = False
                break
            if lam_new > discount_dead:
                out_code[idx[i]] = DEAD
                out_pos[idx[i]] = xn
                out_lam[idx[i]] = lam_new
                out_int[idx[i]] = ii
                alive[i] = False
                break
            xi = xn
            li = lam_new
        if alive[i]:
            x[i] = xi
            lam[i] = li
            integ[i] = ii
            state[i] = si
            if has_h:
                hv_prev[i] = hp
