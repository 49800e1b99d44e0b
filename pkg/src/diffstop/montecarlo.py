"""Weak simulation of the diffusion and strategy evaluation.

Paths follow Euler-Maruyama steps with the discount accumulated by
trapezoid along each step.  Stopping strategies are compiled to a small
automaton (so pasted strategies can switch on arrival at a target), and
hitting is detected per step by first boundary crossing plus an
optional Brownian-bridge correction with crossing probability
exp(-2 d1 d2 / (sigma^2 dt)).

Randomness: one counter-based stream per path, keyed by (seed, path
index) through Philox, consumed in a fixed per-path order; the payoff
reduction runs in path-index order, so estimates are bit-reproducible
for a given (seed, n_paths, dt) regardless of batching.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .errors import StepSizeUnstable
from .model import DiffusionProblem

try:
    from . import _kernels
except Exception:                      # pragma: no cover - numba missing
    _kernels = None

BLOCK_PATHS = 8192
CHUNK_STEPS = 1024
DISCOUNT_DEAD = 27.631021115928547   # -ln(1e-12)


def _affine_coeffs(e):
    """(c0, c1) when the expression is exactly c0 + c1*x, else None."""
    node = e.ast if isinstance(e, exprlang.Expr) else e
    return _affine_node(node)


def _affine_node(node):
    if isinstance(node, exprlang.Num):
        return (node.value, 0.0)
    if isinstance(node, exprlang.Const):
        return (node.value, 0.0)
    if isinstance(node, exprlang.Var):
        return (0.0, 1.0)
    if isinstance(node, exprlang.Neg):
        a = _affine_node(node.arg)
        return None if a is None else (-a[0], -a[1])
    if isinstance(node, exprlang.BinOp):
        a = _affine_node(node.left)
        b = _affine_node(node.right)
        if a is None or b is None:
            return None
        if node.op == "+":
            return (a[0] + b[0], a[1] + b[1])
        if node.op == "-":
            return (a[0] - b[0], a[1] - b[1])
        if node.op == "*":
            if a[1] == 0.0:
                return (a[0] * b[0], a[0] * b[1])
            if b[1] == 0.0:
                return (a[0] * b[0], b[0] * a[1])
            return None
        if node.op == "/" and b[1] == 0.0 and b[0] != 0.0:
            return (a[0] / b[0], a[1] / b[0])
        if node.op == "^" and a[1] == 0.0 and b[1] == 0.0:
            try:
                return (math.pow(a[0], b[0]), 0.0)
            except ValueError:
                return None
    return None

# outcome codes
RUNNING, STOPPED, ABSORBED_OUT, DEAD, TIMEOUT = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 10000
    seed: int = 1
    max_time: float = 20.0
    bridge_correction: bool = True
    antithetic: bool = False


# --- strategies ----------------------------------------------------------

@dataclass(frozen=True)
class Never:
    pass


@dataclass(frozen=True)
class Immediate:
    pass


@dataclass(frozen=True)
class HitLevel:
    y: float


@dataclass(frozen=True)
class TwoSided:
    lo: float
    hi: float


@dataclass(frozen=True)
class StopAtSet:
    intervals: tuple   # sorted, disjoint closed intervals

    def __init__(self, intervals):
        ivs = sorted((float(a), float(b)) for a, b in intervals)
        for (a, b) in ivs:
            if b < a:
                raise ValueError(f"interval ({a}, {b}) reversed")
        for (a, b), (c, d) in zip(ivs, ivs[1:]):
            if c <= b:
                raise ValueError("stopping intervals overlap")
        object.__setattr__(self, "intervals", tuple(ivs))


@dataclass(frozen=True)
class Pasted:
    base: object
    table: dict        # target level -> continuation strategy

    def __init__(self, base, table):
        levels = [float(k) for k in table]
        if len(set(levels)) != len(levels):
            raise ValueError("pasted target levels must be distinct")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "table", {float(k): v for k, v in table.items()})


def paste_strategies(base, targets):
    """Composite strategy: run base to its stopping time; on stopping at
    a target level, continue with that level's strategy; otherwise stop.
    Warns when a target is not inside the base stopping set."""
    base_ivs = _intervals_of(base)
    for level in targets:
        covered = any(a - 1e-12 <= float(level) <= b + 1e-12 for a, b in base_ivs)
        if not covered:
            warnings.warn(f"paste target {level} is not in the base stopping set",
                          RuntimeWarning)
    return Pasted(base, dict(targets))


def _intervals_of(strat):
    if isinstance(strat, Never):
        return ()
    if isinstance(strat, Immediate):
        return ()
    if isinstance(strat, HitLevel):
        return ((strat.y, strat.y),)
    if isinstance(strat, TwoSided):
        return ((-np.inf, strat.lo), (strat.hi, np.inf))
    if isinstance(strat, StopAtSet):
        return strat.intervals
    if isinstance(strat, Pasted):
        return _intervals_of(strat.base)
    raise TypeError(f"not a strategy: {strat!r}")


def _compile(strat):
    """Flatten a strategy (possibly nested pastes) into automaton states:
    each state holds closed stopping intervals and transitions mapping a
    stop level to the next state; -1 means terminal."""
    states = []

    def add(s):
        if isinstance(s, Immediate):
            states.append({"immediate": True, "intervals": (), "trans": {}})
            return len(states) - 1
        if isinstance(s, Pasted):
            idx = len(states)
            states.append(None)
            trans = {lvl: add(sub) for lvl, sub in s.table.items()}
            states[idx] = {"immediate": False,
                           "intervals": _intervals_of(s.base), "trans": trans}
            return idx
        states.append({"immediate": isinstance(s, Immediate),
                       "intervals": _intervals_of(s), "trans": {}})
        return len(states) - 1

    add(strat)
    for st in states:
        ivs = st["intervals"]
        st["lows"] = np.asarray([a for a, _ in ivs], dtype=float)
        st["highs"] = np.asarray([b for _, b in ivs], dtype=float)
        edges = sorted({e for iv in ivs for e in iv if np.isfinite(e)})
        st["edges"] = np.asarray(edges, dtype=float)
        st["tlevels"] = np.asarray(sorted(st["trans"]), dtype=float)
        st["tnext"] = np.asarray([st["trans"][k] for k in sorted(st["trans"])],
                                 dtype=int)
    return states


def _inside(state, x):
    lows, highs = state["lows"], state["highs"]
    if len(lows) == 0:
        return np.zeros(np.shape(x), dtype=bool)
    i = np.searchsorted(lows, x, side="right") - 1
    ok = i >= 0
    i = np.maximum(i, 0)
    return ok & (x <= highs[i])


def _as_vec(v, n):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    return a


@dataclass
class Estimate:
    mean: float
    std_error: float
    n_effective: int
    n_paths: int = 0
    dt: float = 0.0
    seed: int = 0
    truncation_bound: float = 0.0

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error,
                "n_paths": self.n_paths, "n_effective": self.n_effective,
                "dt": self.dt, "seed": self.seed,
                "truncation_bound": self.truncation_bound}


class PathBatch:
    """Lazy handle on a family of simulated paths: stores the problem,
    start point and config, and replays the (seed, path)-keyed streams
    deterministically for each consumer."""

    def __init__(self, prob: DiffusionProblem, x0: float, cfg: SimConfig,
                 span=None, cell_width=None):
        self.prob = prob
        self.x0 = float(x0)
        self.cfg = cfg
        self.span = span
        if cell_width is not None and span is not None:
            sig = math.sqrt(float(prob.sigma2(self.x0)))
            step = sig * math.sqrt(cfg.dt)
            if step > 10.0 * cell_width:
                raise StepSizeUnstable(
                    f"one diffusive step ({step:.3g}) exceeds 10 grid cells "
                    f"({cell_width:.3g} each); shrink dt")
        r0 = float(exprlang.evaluate(prob.r, self.x0))
        if cfg.dt * r0 > 0.1:
            warnings.warn(f"dt * r = {cfg.dt * r0:.3g} > 0.1; discount accrual "
                          "may be too coarse", RuntimeWarning)

    # -- the stepping engine ------------------------------------------

    def run(self, strat, h_expr=None):
        """Simulate every path against the compiled strategy.

        Returns arrays (outcome, position, lam, integral): the outcome
        code, the state and accumulated discount exponent where the path
        resolved, and the running integral of e^{-Lambda} h when h_expr
        is given.
        """
        cfg = self.cfg
        prob = self.prob
        states = _compile(strat)
        n = cfg.n_paths
        out_code = np.zeros(n, dtype=np.int8)
        out_pos = np.full(n, self.x0, dtype=float)
        out_lam = np.zeros(n, dtype=float)
        out_int = np.zeros(n, dtype=float)

        n_steps = int(round(cfg.max_time / cfg.dt))
        dt = cfg.dt
        sqdt = math.sqrt(dt)
        abs_left = prob.absorbing_left()
        abs_right = prob.absorbing_right()
        fast = self._fast_params(states, h_expr)

        for lo_pid in range(0, n, BLOCK_PATHS):
            hi_pid = min(lo_pid + BLOCK_PATHS, n)
            self._run_block(np.arange(lo_pid, hi_pid), states, h_expr, fast,
                            n_steps, dt, sqdt, abs_left, abs_right,
                            out_code, out_pos, out_lam, out_int)
        return out_code, out_pos, out_lam, out_int

    def _fast_params(self, states, h_expr):
        """Flattened automaton plus affine coefficient parameters for the
        compiled kernel; None when the problem needs the generic path."""
        if _kernels is None:
            return None
        prob = self.prob
        ab = _affine_coeffs(prob.b)
        as_ = _affine_coeffs(prob.sigma)
        ar = _affine_coeffs(prob.r)
        if ab is None or as_ is None or ar is None:
            return None
        if h_expr is not None:
            ah = _affine_coeffs(h_expr)
            if ah is None:
                return None
            has_h, h0, h1 = True, ah[0], ah[1]
        else:
            has_h, h0, h1 = False, 0.0, 0.0

        def flat(key):
            off = np.zeros(len(states) + 1, dtype=np.int64)
            vals = []
            for i, st in enumerate(states):
                vals.extend(st[key])
                off[i + 1] = len(vals)
            return np.asarray(vals, dtype=float), off

        edges_flat, edges_off = flat("edges")
        lows_flat, ivs_off = flat("lows")
        highs_flat, _ = flat("highs")
        tlev_flat, tr_off = flat("tlevels")
        tnext = []
        for st in states:
            tnext.extend(int(v) for v in st["tnext"])
        tnext_flat = np.asarray(tnext, dtype=np.int64)
        imm = np.asarray([st["immediate"] for st in states], dtype=np.bool_)
        return {
            "b0": ab[0], "b1": ab[1], "s0": as_[0], "s1": as_[1],
            "r0": ar[0], "r1": ar[1],
            "edges_flat": edges_flat, "edges_off": edges_off,
            "lows_flat": lows_flat, "highs_flat": highs_flat,
            "ivs_off": ivs_off,
            "tlev_flat": tlev_flat, "tnext_flat": tnext_flat, "tr_off": tr_off,
            "imm_flags": imm, "has_h": has_h, "h0": h0, "h1": h1,
        }

    def _run_block(self, pids, states, h_expr, fast, n_steps, dt, sqdt,
                   abs_left, abs_right, out_code, out_pos, out_lam, out_int):
        prob = self.prob
        cfg = self.cfg
        m = len(pids)
        key_ids = pids // 2 if cfg.antithetic else pids
        gens = [np.random.Generator(np.random.Philox(key=[cfg.seed, int(pid)]))
                for pid in key_ids]
        flip = (np.where(pids % 2 == 1, -1.0, 1.0) if cfg.antithetic
                else np.ones(m))
        imm_flags = np.asarray([st["immediate"] for st in states], dtype=bool)

        x = np.full(m, self.x0)
        lam = np.zeros(m)
        integ = np.zeros(m)
        state = np.zeros(m, dtype=int)
        idx = pids.copy()

        # immediate resolution at t = 0
        st0 = states[0]
        hit0 = np.full(m, st0["immediate"])
        if not st0["immediate"]:
            hit0 = _inside(st0, x)
        if hit0.any():
            nxt = self._transition_levels(st0, x, hit0)
            follow = hit0 & (nxt >= 0) & ~imm_flags[np.maximum(nxt, 0)]
            term = hit0 & ~follow
            out_code[idx[term]] = STOPPED
            out_pos[idx[term]] = x[term]
            out_lam[idx[term]] = 0.0
            state[follow] = nxt[follow]
            keep = ~term
            if not keep.all():
                x, lam, integ, state, idx, flip = (
                    a[keep] for a in (x, lam, integ, state, idx, flip))
                gens = [g for g, k in zip(gens, keep) if k]

        hv_prev = None
        if h_expr is not None and len(x):
            hv_prev = np.asarray(exprlang.evaluate(h_expr, x), dtype=float) \
                * np.exp(-lam)
            if hv_prev.ndim == 0:
                hv_prev = np.full(len(x), float(hv_prev))

        step = 0
        chunk = 128        # grows toward CHUNK_STEPS; short-lived paths
        while step < n_steps and len(x):   # then waste fewer draws
            take = min(chunk, n_steps - step)
            chunk = min(2 * chunk, CHUNK_STEPS)
            z_buf = np.empty((len(x), take))
            u_buf = np.empty((len(x), take))
            for i, g in enumerate(gens):
                g.standard_normal(out=z_buf[i])
                g.random(out=u_buf[i])
            z_buf *= flip[:, None]

            alive = np.ones(len(x), dtype=bool)
            if fast is not None:
                hv = hv_prev if hv_prev is not None else np.zeros(len(x))
                _kernels.run_chunk(
                    x, lam, integ, state, alive, z_buf, u_buf, dt, sqdt,
                    fast["b0"], fast["b1"], fast["s0"], fast["s1"],
                    fast["r0"], fast["r1"],
                    fast["edges_flat"], fast["edges_off"],
                    fast["lows_flat"], fast["highs_flat"], fast["ivs_off"],
                    fast["tlev_flat"], fast["tnext_flat"], fast["tr_off"],
                    fast["imm_flags"],
                    fast["has_h"], fast["h0"], fast["h1"], hv,
                    cfg.bridge_correction,
                    abs_left, prob.alpha if abs_left else 0.0,
                    abs_right, prob.beta if abs_right else 0.0,
                    DISCOUNT_DEAD,
                    out_code, out_pos, out_lam, out_int, idx)
                step += take
                if not alive.all():
                    x, lam, integ, state, idx, flip = (
                        a[alive] for a in (x, lam, integ, state, idx, flip))
                    gens = [g for g, k in zip(gens, alive) if k]
                    if hv_prev is not None:
                        hv_prev = hv[alive]
                elif hv_prev is not None:
                    hv_prev = hv
                continue

            for j in range(take):
                ali = np.nonzero(alive)[0]
                if len(ali) == 0:
                    break
                xa = x[ali]
                bv = _as_vec(exprlang.evaluate(prob.b, xa), len(xa))
                sv = _as_vec(exprlang.evaluate(prob.sigma, xa), len(xa))
                rv = _as_vec(exprlang.evaluate(prob.r, xa), len(xa))
                xn = xa + bv * dt + sv * sqdt * z_buf[ali, j]

                part = np.zeros(len(xa), dtype=bool)   # stopped this step
                stop_pos = xn.copy()
                theta = np.ones(len(xa))

                for si, st in enumerate(states):
                    if len(st["edges"]) == 0:
                        continue
                    sm = state[ali] == si
                    if not sm.any():
                        continue
                    xs, xe = xa[sm], xn[sm]
                    edges = st["edges"]
                    # first edge crossed along the step direction;
                    # an edge exactly at the start point does not count
                    e_up_i = np.searchsorted(edges, xs, side="right")
                    e_dn_i = np.searchsorted(edges, xs, side="left") - 1
                    has_up = e_up_i < len(edges)
                    has_dn = e_dn_i >= 0
                    e_up = np.where(has_up, edges[np.minimum(e_up_i, len(edges) - 1)],
                                    np.inf)
                    e_dn = np.where(has_dn, edges[np.maximum(e_dn_i, 0)], -np.inf)
                    cross_up = has_up & (xe >= e_up)
                    cross_dn = has_dn & (xe <= e_dn)
                    hit = cross_up | cross_dn
                    pos = xe.copy()
                    pos[cross_up] = e_up[cross_up]
                    pos[cross_dn] = e_dn[cross_dn]
                    denom = np.maximum(np.abs(xe - xs), 1e-300)
                    th = np.clip(np.abs(pos - xs) / denom, 0.0, 1.0)
                    th[~hit] = 1.0
                    if cfg.bridge_correction:
                        free = ~hit
                        if free.any():
                            sig2dt = np.maximum((sv[sm] ** 2) * dt, 1e-300)
                            with np.errstate(over="ignore"):
                                p_up = np.where(
                                    has_up & free,
                                    np.exp(-2.0 * (e_up - xs) * (e_up - xe) / sig2dt),
                                    0.0)
                                p_dn = np.where(
                                    has_dn & free,
                                    np.exp(-2.0 * (xs - e_dn) * (xe - e_dn) / sig2dt),
                                    0.0)
                            u = u_buf[ali, j][sm]
                            b_up = free & (u < p_up)
                            b_dn = free & ~b_up & (u < p_up + p_dn)
                            hit |= b_up | b_dn
                            pos[b_up] = e_up[b_up]
                            pos[b_dn] = e_dn[b_dn]
                            th[b_up] = 0.5
                            th[b_dn] = 0.5
                    part[sm] = hit
                    stop_pos[sm] = pos
                    theta[sm] = th

                # absorption, unless a stop edge was crossed first
                absorbed = np.zeros(len(xa), dtype=bool)
                if abs_left:
                    cr = ~part & (xn <= prob.alpha)
                    absorbed |= cr
                    xn[cr] = prob.alpha
                    stop_pos[cr] = prob.alpha
                if abs_right:
                    cr = ~part & (xn >= prob.beta)
                    absorbed |= cr
                    xn[cr] = prob.beta
                    stop_pos[cr] = prob.beta

                lam_a = lam[ali]
                lam_stop = lam_a + theta * rv * dt
                lam_full = lam_a + 0.5 * (rv + _as_vec(
                    exprlang.evaluate(prob.r, xn), len(xn))) * dt

                # resolve stops: terminal payoff or pasted transition
                terminal = np.zeros(len(xa), dtype=bool)
                if part.any():
                    for si, st in enumerate(states):
                        sm = part & (state[ali] == si)
                        if not sm.any():
                            continue
                        nxt = self._transition_levels(st, stop_pos, sm)
                        follow = sm & (nxt >= 0) & ~imm_flags[np.maximum(nxt, 0)]
                        term = sm & ~follow
                        terminal |= term
                        gi = ali[term]
                        out_code[idx[gi]] = STOPPED
                        out_pos[idx[gi]] = stop_pos[term]
                        out_lam[idx[gi]] = lam_stop[term]
                        if follow.any():
                            state[ali[follow]] = nxt[follow]
                # every partial-step path ends the step at its stop level
                xn[part] = stop_pos[part]
                x_final = xn
                lam_final = np.where(part, lam_stop, lam_full)

                if h_expr is not None:
                    hv = _as_vec(exprlang.evaluate(h_expr, x_final), len(x_final)) \
                        * np.exp(-lam_final)
                    seg = 0.5 * (hv_prev[ali] + hv) * dt * np.where(part, theta, 1.0)
                    integ[ali] += seg
                    hv_prev[ali] = hv

                # absorbed paths: stop set containing the endpoint pays
                # there; otherwise the payoff clock has run out
                if absorbed.any():
                    for si, st in enumerate(states):
                        sm = absorbed & (state[ali] == si)
                        if not sm.any():
                            continue
                        inside = _inside(st, x_final[sm])
                        gi = ali[sm]
                        out_code[idx[gi[inside]]] = STOPPED
                        out_code[idx[gi[~inside]]] = ABSORBED_OUT
                        out_pos[idx[gi]] = x_final[sm]
                        out_lam[idx[gi]] = lam_final[sm]

                dead = ~part & ~absorbed & (lam_final > DISCOUNT_DEAD)
                if dead.any():
                    gi = ali[dead]
                    out_code[idx[gi]] = DEAD
                    out_pos[idx[gi]] = x_final[dead]
                    out_lam[idx[gi]] = lam_final[dead]

                x[ali] = x_final
                lam[ali] = lam_final
                gone = terminal | absorbed | dead
                if gone.any():
                    out_int[idx[ali[gone]]] = integ[ali[gone]]
                    alive[ali[gone]] = False

            step += take
            if not alive.all():
                x, lam, integ, state, idx, flip = (
                    a[alive] for a in (x, lam, integ, state, idx, flip))
                gens = [g for g, k in zip(gens, alive) if k]
                if hv_prev is not None:
                    hv_prev = hv_prev[alive]

        if len(x):
            out_code[idx] = TIMEOUT
            out_pos[idx] = x
            out_lam[idx] = lam
            out_int[idx] = integ
        return

    @staticmethod
    def _transition_levels(st, pos, mask):
        nxt = np.full(len(pos), -1, dtype=int)
        if len(st["tlevels"]):
            i = np.clip(np.searchsorted(st["tlevels"], pos), 0,
                        len(st["tlevels"]) - 1)
            i2 = np.clip(i - 1, 0, len(st["tlevels"]) - 1)
            for cand in (i, i2):
                match = mask & (np.abs(st["tlevels"][cand] - pos) <= 1e-9 *
                                np.maximum(1.0, np.abs(pos))) & (nxt < 0)
                nxt[match] = st["tnext"][cand[match]]
        return nxt

    def sample_at(self, t):
        """State of every path at time t (absorption respected)."""
        cfg = SimConfig(dt=self.cfg.dt, n_paths=self.cfg.n_paths,
                        seed=self.cfg.seed, max_time=t,
                        bridge_correction=False, antithetic=self.cfg.antithetic)
        sub = PathBatch(self.prob, self.x0, cfg)
        code, pos, lam, _ = sub.run(Never())
        return pos


def simulate_paths(prob: DiffusionProblem, x0: float, cfg: SimConfig,
                   grid=None) -> PathBatch:
    """Prepare a deterministic batch of Euler-Maruyama paths from x0."""
    span = cell = None
    if grid is not None:
        span = (grid.left_trunc, grid.right_trunc)
        cell = float(np.median(np.diff(grid.nodes)))
    return PathBatch(prob, x0, cfg, span=span, cell_width=cell)


def evaluate_strategy(prob, paths: PathBatch, strat, payoff,
                      dump_csv=None) -> Estimate:
    """Discounted payoff estimate E[e^{-Lambda_tau} f(X_tau); tau finite].

    Unresolved paths (never stopped within the horizon) contribute zero;
    the reported truncation bound e^{-r_floor max_time} sup fbar bounds
    what such a path could still have earned.
    """
    cfg = paths.cfg
    if isinstance(strat, Immediate):
        val = float(payoff.raw_values(paths.x0))
        return Estimate(mean=val, std_error=0.0, n_effective=cfg.n_paths,
                        n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed)
    if isinstance(strat, Never):
        return Estimate(mean=0.0, std_error=0.0, n_effective=cfg.n_paths,
                        n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed)

    code, pos, lam, _ = paths.run(strat)
    vals = np.zeros(cfg.n_paths)
    hit = code == STOPPED
    if hit.any():
        fv = np.asarray(payoff.raw_values(pos[hit]), dtype=float)
        if prob.absorbing_left() and payoff.f_at_absorbing[0] is not None:
            fv = np.where(np.abs(pos[hit] - prob.alpha) < 1e-12,
                          payoff.f_at_absorbing[0], fv)
        if prob.absorbing_right() and payoff.f_at_absorbing[1] is not None:
            fv = np.where(np.abs(pos[hit] - prob.beta) < 1e-12,
                          payoff.f_at_absorbing[1], fv)
        vals[hit] = np.exp(-lam[hit]) * fv

    mean = float(np.mean(vals))
    if cfg.n_paths > 1:
        se = float(np.std(vals, ddof=1) / math.sqrt(cfg.n_paths))
    else:
        se = 0.0
    fbar_max = float(np.max(np.abs(payoff.f_bar.values)))
    bound = math.exp(-prob.r_floor * cfg.max_time) * fbar_max
    if dump_csv:
        with open(dump_csv, "w", newline="") as fh:
            fh.write("path,outcome,x_stop,lam,discounted_payoff\r\n")
            for i in range(cfg.n_paths):
                fh.write(f"{i},{int(code[i])},{pos[i]!r},{lam[i]!r},{vals[i]!r}\r\n")
    return Estimate(mean=mean, std_error=se,
                    n_effective=int(np.sum(code != TIMEOUT)),
                    n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed,
                    truncation_bound=bound)


def tau_star_strategy(sol, localization=None):
    """First-entry strategy for the solver's stopping region; an empty
    region degrades to Never.  With localization (a_n, b_n) the strategy
    also stops at those levels."""
    intervals = list(sol.stopping_intervals)
    if localization is not None:
        a_n, b_n = localization
        if not intervals:
            return TwoSided(a_n, b_n)
        intervals = _merge_intervals(intervals + [(-np.inf, a_n), (b_n, np.inf)])
    if not intervals:
        return Never()
    return StopAtSet(intervals)


def _merge_intervals(ivs):
    ivs = sorted((float(a), float(b)) for a, b in ivs)
    out = [ivs[0]]
    for a, b in ivs[1:]:
        if a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def verify_dynkin(prob, fp, h, x0, strat, cfg: SimConfig, potential=None):
    """Monte-Carlo check of the potential identity
    R(x0) = E[int_0^tau e^{-Lambda} h dt + e^{-Lambda_tau} R(X_tau)]."""
    from .calculus import potential_ac

    if isinstance(h, str):
        h = exprlang.parse(h, getattr(prob, "constants", None))
    if potential is None:
        potential = potential_ac(prob, fp, h, check_residuals=False)
    paths = simulate_paths(prob, x0, cfg, grid=fp.grid)

    if isinstance(strat, Immediate):
        rhs = float(potential(x0))
        lhs = Estimate(mean=rhs, std_error=0.0, n_effective=cfg.n_paths,
                       n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed)
        return {"lhs": lhs, "rhs": rhs, "z_score": 0.0}

    code, pos, lam, integ = paths.run(strat, h_expr=h)
    vals = integ.copy()
    hit = code == STOPPED
    if hit.any():
        vals[hit] += np.exp(-lam[hit]) * np.asarray(potential(pos[hit]), dtype=float)
    # absorbed paths carry R(endpoint) = 0; dead/timeout tails are
    # negligible by the discount floor
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else 0.0
    rhs = float(potential(x0))
    z = (mean - rhs) / se if se > 0 else 0.0
    lhs = Estimate(mean=mean, std_error=se, n_effective=int(np.sum(code != TIMEOUT)),
                   n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed)
    return {"lhs": lhs, "rhs": rhs, "z_score": float(z)}
