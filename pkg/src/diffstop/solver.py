"""Value function, regions and verification for the stopping problem.

The value function is the smallest discounted-excessive majorant of the
reward envelope.  In the coordinates s = psi/phi, g = fbar/phi that
majorant is the least concave majorant of the data points together with
two boundary constraints: an anchor (0, limA) carrying the left limit
of fbar/phi, and a terminal ray of slope limB carrying the right limit
of fbar/psi.  The hull is built by a monotone-chain pass, and every
hull edge with intercept A and slope B is a waiting interval on which
v = A phi + B psi; contact points bound the stopping region.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .calculus import apply_L, potential_ac
from .errors import HullDegeneracy, InfiniteValue
from .odecore import FundamentalPair, Grid, GridFunction

DEFAULT_TOL_CONTACT = 1e-9


@dataclass
class Reward:
    """Payoff data on a grid: the raw expression (when available), its
    upper-semicontinuous envelope at the nodes, and declared values at
    absorbing endpoints."""

    f: exprlang.Expr | None
    breakpoints: tuple
    f_bar: GridFunction
    f_at_absorbing: tuple = (None, None)

    def raw_values(self, x):
        if self.f is None:
            return self.f_bar.interp(x)
        return exprlang.evaluate(self.f, x)


def usc_envelope(f, breakpoints, grid: Grid, prob=None) -> GridFunction:
    """Envelope values at the nodes: f(x) off breakpoints, the max of
    value and one-sided limits at breakpoints, and the declared reward
    verbatim at absorbing endpoints."""
    gf = GridFunction.from_expr(grid, f, breakpoints=breakpoints)
    for p in breakpoints:
        i = grid.index_of(p)
        if i is None:
            continue
        left, right, value = exprlang.one_sided_limits(f, breakpoints, grid.nodes[i])
        gf.values[i] = max(value, left, right)
    if prob is not None:
        if prob.absorbing_left() and prob.f_at_alpha is not None \
                and grid.left_trunc == prob.alpha:
            gf.values[0] = prob.f_at_alpha
        if prob.absorbing_right() and prob.f_at_beta is not None \
                and grid.right_trunc == prob.beta:
            gf.values[-1] = prob.f_at_beta
    return gf


def build_reward(prob, grid: Grid) -> Reward:
    fbar = usc_envelope(prob.reward_f, tuple(prob.reward_breakpoints), grid, prob)
    return Reward(f=prob.reward_f, breakpoints=tuple(prob.reward_breakpoints),
                  f_bar=fbar, f_at_absorbing=(prob.f_at_alpha, prob.f_at_beta))


def reward_from_values(grid: Grid, values, f_at_absorbing=(None, None)) -> Reward:
    return Reward(f=None, breakpoints=(), f_bar=GridFunction.from_values(grid, values),
                  f_at_absorbing=f_at_absorbing)


# --- boundary limits ----------------------------------------------------

def _tail_limit(ratios):
    """Limit estimate of a ratio sequence ordered toward the boundary
    (boundary-most last).

    A tail still decaying substantially across the window is read as a
    power-law decay to zero; a settled decaying tail converges to its
    boundary-most value; an oscillating tail takes the conservative
    window maximum.  The second return flags a tail that climbs toward
    the boundary, the case where constraints from beyond the truncation
    genuinely bind.
    """
    q = np.asarray(ratios, dtype=float)
    d = np.diff(q)
    rise = float(np.sum(np.maximum(d, 0.0)))
    fall = float(np.sum(np.maximum(-d, 0.0)))
    total = rise + fall
    if total == 0.0 or fall <= 1e-6 * total:
        return float(q[-1]), True            # flat or climbing
    if rise <= 1e-6 * total:
        if q[-1] <= 0.0:
            return float(q[-1]), False
        if q[0] / q[-1] >= 1.5:
            return 0.0, False                # power-law decay to zero
        return float(q[-1]), False
    return float(np.max(q)), True            # oscillating


def _boundary_data(prob, fp, rew):
    """limA, limB with their tail diagnostics.

    The window is the outermost 5% of nodes (at least 3); an absorbing
    endpoint contributes its declared reward value through the envelope
    at the endpoint node.
    """
    g = fp.grid
    n = len(g)
    k = max(3, n // 20)
    fbar = rew.f_bar.values
    with np.errstate(divide="ignore", invalid="ignore"):
        ql = fbar[:k] / fp.phi.values[:k]
        qr = np.where(fp.psi.values[-k:] > 0, fbar[-k:] / fp.psi.values[-k:], 0.0)
    ql = ql[::-1]                     # boundary-most last
    limA, climb_l = _tail_limit(ql)
    limB, climb_r = _tail_limit(qr)
    if climb_r:
        # a ratio climbing to a finite limit lags the asymptotic psi
        # coefficient by O(1/s); the window chord of fbar/phi against
        # s = psi/phi reads that coefficient off directly
        with np.errstate(divide="ignore", invalid="ignore"):
            gw = fbar[-k:] / fp.phi.values[-k:]
        sw = fp.s_ratio[-k:]
        chord = float((gw[-1] - gw[0]) / (sw[-1] - sw[0]))
        if np.isfinite(chord):
            limB = max(limB, chord)
    # at an absorbing endpoint the limsup runs over the whole closed
    # interval: both the declared endpoint reward (already in the window
    # through the envelope) and the interior limit of the raw reward
    if prob.absorbing_left() and rew.f is not None and g.left_trunc == prob.alpha:
        _, right_lim, _ = exprlang.one_sided_limits(rew.f, rew.breakpoints, prob.alpha)
        limA = max(limA, float(right_lim) / float(fp.phi.values[0]))
    if prob.absorbing_right() and rew.f is not None and g.right_trunc == prob.beta:
        left_lim, _, _ = exprlang.one_sided_limits(rew.f, rew.breakpoints, prob.beta)
        if fp.psi.values[-1] > 0:
            limB = max(limB, float(left_lim) / float(fp.psi.values[-1]))
    # a climbing tail that still grows by 2x across the window is read
    # as a divergent ratio, i.e. an infinite value function
    inf_l = climb_l and ql[0] > 0 and ql[-1] >= 2.0 * ql[0]
    inf_r = climb_r and qr[0] > 0 and qr[-1] >= 2.0 * qr[0]
    finite = (np.isfinite(fbar).all() and np.isfinite(limA) and np.isfinite(limB)
              and not inf_l and not inf_r)
    return {"finite": bool(finite), "limA": float(limA), "limB": float(limB),
            "climbing_left": climb_l, "climbing_right": climb_r}


def check_finiteness(prob, fp: FundamentalPair, rew: Reward):
    """Whether the value function is real-valued, with the boundary
    growth limits limA = limsup fbar/phi (left) and limB = limsup
    fbar/psi (right) read off the truncation tails."""
    d = _boundary_data(prob, fp, rew)
    return {"finite": d["finite"], "limA": d["limA"], "limB": d["limB"]}


# --- the hull solve -------------------------------------------------------

@dataclass
class ValueSolution:
    v: GridFunction
    limA: float
    limB: float
    waiting: list                     # [{"c","d","A","B"}]
    stopping_intervals: list          # closure of {v = f}; where tau* stops
    tau_star_region: list             # closed set {v = fbar}
    finite: bool
    tau_star_optimal: bool
    optimality_conditions: dict
    contact_mask: np.ndarray = field(repr=False, default=None)
    hull_vertices: list = field(repr=False, default_factory=list)

    def to_dict(self):
        def pt(x):
            if x is None or math.isinf(x):
                return "-inf" if x < 0 else "inf"
            return float(x)
        return {
            "finite": self.finite,
            "limA": self.limA,
            "limB": self.limB,
            "waiting": [{"c": pt(w["c"]), "d": pt(w["d"]),
                         "A": w["A"], "B": w["B"]} for w in self.waiting],
            "stopping_intervals": [[float(a), float(b)]
                                   for a, b in self.stopping_intervals],
            "tau_star_optimal": self.tau_star_optimal,
            "optimality_conditions": self.optimality_conditions,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _upper_hull(points):
    """Monotone-chain upper hull of points sorted by s; keeps vertices
    whose chords have strictly decreasing slopes."""
    hull = []
    for s, g, idx in points:
        while len(hull) >= 2:
            s0, g0, _ = hull[-2]
            s1, g1, _ = hull[-1]
            # pop the middle point unless it pokes above the chord
            if (g1 - g0) * (s - s0) - (g - g0) * (s1 - s0) <= 0.0:
                hull.pop()
            else:
                break
        hull.append((s, g, idx))
    return hull


def solve(prob, fp: FundamentalPair, rew: Reward,
          tol_contact: float = DEFAULT_TOL_CONTACT) -> ValueSolution:
    """Compute the value function as the least concave majorant of
    fbar/phi in the coordinate s = psi/phi, with boundary behaviour
    anchored at (0, limA) and a terminal slope limB."""
    bd = _boundary_data(prob, fp, rew)
    if not bd["finite"]:
        raise InfiniteValue(
            f"value function is infinite: limA={bd['limA']}, limB={bd['limB']}")
    limA, limB = bd["limA"], bd["limB"]

    g = fp.grid
    x = g.nodes
    n = len(g)
    s = fp.s_ratio
    if not (np.diff(s) > 0).all():
        raise HullDegeneracy("duplicate abscissae in s = psi/phi")
    with np.errstate(divide="ignore", invalid="ignore"):
        gvals = rew.f_bar.values / fp.phi.values

    pts = []
    if s[0] > 0.0:
        pts.append((0.0, limA, None))
    else:
        # absorbing left endpoint sits exactly at s = 0; it doubles as
        # the anchor carrying the boundary limit
        gvals = gvals.copy()
        gvals[0] = max(gvals[0], limA)
    pts.extend((float(s[i]), float(gvals[i]), i) for i in range(n))
    hull = _upper_hull(pts)

    # Terminal-slope surgery.  Edge slopes are the psi-coefficients of
    # the majorant, so they may never be negative; on top of that, when
    # fbar/psi climbs toward the boundary the constraints from beyond
    # the truncation force the terminal slope up to limB.
    pop_below = max(0.0, limB) if bd["climbing_right"] else 0.0
    ray_slope = max(limB, 0.0)
    # the tolerance absorbs rounding jitter of edge slopes along data
    # collinear with the terminal ray
    pop_tol = 1e-12 * (1.0 + abs(pop_below))
    while len(hull) >= 2:
        s0, g0, _ = hull[-2]
        s1, g1, _ = hull[-1]
        if (g1 - g0) / (s1 - s0) < pop_below + pop_tol:
            hull.pop()
        else:
            break

    hs = np.array([p[0] for p in hull])
    hg = np.array([p[1] for p in hull])
    ghat = np.empty(n)
    if len(hull) == 1:
        ghat[:] = hg[0] + ray_slope * (s - hs[0])
    else:
        edge = np.clip(np.searchsorted(hs, s, side="right") - 1, 0, len(hull) - 2)
        slopes = (hg[1:] - hg[:-1]) / (hs[1:] - hs[:-1])
        ghat = hg[edge] + slopes[edge] * (s - hs[edge])
        beyond = s > hs[-1]
        ghat[beyond] = hg[-1] + ray_slope * (s[beyond] - hs[-1])
    v_vals = fp.phi.values * np.maximum(ghat, gvals)

    contact = (v_vals - rew.f_bar.values) <= tol_contact * (1.0 + np.abs(v_vals))

    # value at an absorbing endpoint is the declared reward there
    if prob.absorbing_left() and g.left_trunc == prob.alpha:
        v_vals = v_vals.copy()
        v_vals[0] = rew.f_bar.values[0]
        contact[0] = True
    if prob.absorbing_right() and g.right_trunc == prob.beta:
        v_vals = v_vals.copy()
        v_vals[-1] = rew.f_bar.values[-1]
        contact[-1] = True

    waiting, slopes_l, slopes_r = _assemble_regions(
        prob, fp, rew, v_vals, contact, hull, limA, limB, s, gvals)

    envelope_region = _contact_intervals(x, contact)

    # tau* stops on the closure of {v = f}: an isolated envelope contact
    # where the raw reward sits below its own limsup never pays, while a
    # region boundary carrying the one-sided limit does (the path stops
    # on first touch and collects f there)
    raw = np.asarray(rew.raw_values(x), dtype=float)
    raw_contact = (v_vals - raw) <= tol_contact * (1.0 + np.abs(v_vals))
    grown = raw_contact.copy()
    grown[:-1] |= raw_contact[1:] & contact[:-1]
    grown[1:] |= raw_contact[:-1] & contact[1:]
    stopping = _contact_intervals(x, grown)

    flags = _optimality_flags(prob, fp, rew, bd)

    vgf = GridFunction(g, v_vals, slopes_l, slopes_r)
    return ValueSolution(
        v=vgf, limA=limA, limB=limB, waiting=waiting,
        stopping_intervals=stopping, tau_star_region=envelope_region,
        finite=True, tau_star_optimal=flags["tau_star_optimal"],
        optimality_conditions=flags["conditions"],
        contact_mask=contact, hull_vertices=[(p[0], p[1]) for p in hull])


def _edge_at(hull, limB, sq):
    """Intercept/slope of the majorant's supporting line at abscissa sq."""
    hs = [p[0] for p in hull]
    if len(hull) == 1 or sq > hs[-1]:
        ray = max(limB, 0.0)
        g0 = hull[-1][1]
        return g0 - ray * hs[-1], ray, len(hull) - 1
    k = max(0, min(np.searchsorted(hs, sq, side="right") - 1, len(hull) - 2))
    s0, g0, _ = hull[k]
    s1, g1, _ = hull[k + 1]
    B = (g1 - g0) / (s1 - s0)
    return g0 - B * s0, B, k


def _refine_contact(x, s, gvals, A, B, i, breakpoints):
    """Sub-grid tangency refinement: the contact of a smooth arc with a
    hull edge is the parabola vertex of gvals - (A + B s) around node i.
    Breakpoint contacts stay on the node."""
    for p in breakpoints:
        if abs(x[i] - p) <= 1e-9 * max(1.0, abs(p)):
            return float(x[i])
    if i <= 0 or i >= len(x) - 1:
        return float(x[i])
    q = gvals[i - 1:i + 2] - (A + B * s[i - 1:i + 2])
    s_loc = s[i - 1:i + 2]
    d1 = (q[1] - q[0]) / (s_loc[1] - s_loc[0])
    d2 = (q[2] - q[1]) / (s_loc[2] - s_loc[1])
    denom = d2 - d1
    if denom >= 0 or not np.isfinite(denom):
        return float(x[i])
    # parabola through the three points: its slope is linear through the
    # cell midpoints, and the vertex is where that slope vanishes
    mid0 = 0.5 * (s_loc[0] + s_loc[1])
    mid1 = 0.5 * (s_loc[1] + s_loc[2])
    s_star = mid0 - d1 * (mid1 - mid0) / denom
    s_star = min(max(s_star, s_loc[0]), s_loc[2])
    # map back to x by local linear interpolation of the monotone s(x)
    if s_star <= s_loc[1]:
        t = (s_star - s_loc[0]) / (s_loc[1] - s_loc[0])
        return float(x[i - 1] + t * (x[i] - x[i - 1]))
    t = (s_star - s_loc[1]) / (s_loc[2] - s_loc[1])
    return float(x[i] + t * (x[i + 1] - x[i]))


def _assemble_regions(prob, fp, rew, v_vals, contact, hull, limA, limB, s, gvals):
    """Waiting intervals with their (A, B) plus the value function's
    one-sided slopes: hull-edge slopes on waiting runs, envelope slopes
    on contact nodes."""
    g = fp.grid
    x = g.nodes
    n = len(g)
    slopes_l = rew.f_bar.left_slopes.copy()
    slopes_r = rew.f_bar.right_slopes.copy()

    waiting = []
    i = 0
    while i < n:
        if contact[i]:
            i += 1
            continue
        j = i
        while j < n and not contact[j]:
            j += 1
        # run of waiting nodes i..j-1, covered by one supporting line
        mid = (i + j) // 2
        A, B, _ = _edge_at(hull, limB, float(s[mid]))
        dphi = fp.phi.right_slopes
        dpsi = fp.psi.right_slopes
        for kk in range(i, j):
            slopes_l[kk] = A * dphi[kk] + B * dpsi[kk]
            slopes_r[kk] = slopes_l[kk]
        if i > 0:
            slopes_r[i - 1] = A * dphi[i - 1] + B * dpsi[i - 1]
            c_val = _refine_contact(x, s, gvals, A, B, i - 1, rew.breakpoints)
        else:
            c_val = prob.alpha
        if j < n:
            slopes_l[j] = A * dphi[j] + B * dpsi[j]
            d_val = _refine_contact(x, s, gvals, A, B, j, rew.breakpoints)
        else:
            d_val = prob.beta
        waiting.append({"c": c_val, "d": d_val, "A": float(A), "B": float(B)})
        i = j
    return waiting, slopes_l, slopes_r


def _contact_intervals(x, contact):
    out = []
    i = 0
    n = len(x)
    while i < n:
        if not contact[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and contact[j + 1]:
            j += 1
        out.append((float(x[i]), float(x[j])))
        i = j + 1
    return out


def _optimality_flags(prob, fp, rew, bd, tol=1e-6):
    """Conditions under which the first entry into {v = fbar} is an
    optimal stopping time (and not merely epsilon-optimal).

    A growth limit read from a decaying truncation tail is consistent
    with zero; only a tail that climbs toward the boundary witnesses a
    genuinely positive limsup.
    """
    conds = {}
    limA, limB = bd["limA"], bd["limB"]
    scale = float(np.max(np.abs(rew.f_bar.values))) or 1.0
    probe = max(3, len(fp.grid) // 100)
    if not prob.absorbing_left():
        conds["left_growth_zero"] = bool(
            not bd["climbing_left"] or abs(limA) <= 1e-9 * (1.0 + abs(limA)))
    else:
        f_a = rew.f_bar.values[0]
        interior = float(np.max(rew.f_bar.values[1:1 + probe]))
        conds["left_absorbing_value_attains_limsup"] = bool(
            f_a >= interior - tol * max(1.0, scale))
    if not prob.absorbing_right():
        conds["right_growth_zero"] = bool(
            not bd["climbing_right"] or abs(limB) <= 1e-9 * (1.0 + abs(limB)))
    else:
        f_b = rew.f_bar.values[-1]
        interior = float(np.max(rew.f_bar.values[-1 - probe:-1]))
        conds["right_absorbing_value_attains_limsup"] = bool(
            f_b >= interior - tol * max(1.0, scale))
    # a reward below its own envelope also defeats optimality
    if rew.f is not None:
        env_gap = False
        for p in rew.breakpoints:
            i = fp.grid.index_of(p)
            if i is None:
                continue
            raw = float(rew.raw_values(fp.grid.nodes[i]))
            if rew.f_bar.values[i] > raw + tol * max(1.0, scale):
                env_gap = True
        conds["reward_upper_semicontinuous"] = not env_gap
    return {"tau_star_optimal": bool(all(conds.values())), "conditions": conds}


def value_at(prob, fp: FundamentalPair, rew: Reward, x: float,
             sol: ValueSolution = None, tol_contact: float = DEFAULT_TOL_CONTACT):
    """Pointwise value with the optimal majorant pair: the minimal
    A phi(x) + B psi(x) over nonnegative pairs dominating fbar, read off
    the active hull edge.  Contacts are the points where the supporting
    line touches the envelope."""
    if sol is None:
        sol = solve(prob, fp, rew, tol_contact=tol_contact)
    g = fp.grid
    sq = float(fp.psi.interp(x) / fp.phi.interp(x))
    hull = [(a, b, None) for a, b in sol.hull_vertices]
    A, B, k = _edge_at(hull, sol.limB, sq)
    vx = float(sol.v.interp(x))
    contacts = []
    sarr = fp.s_ratio
    for (lo, hi) in sol.stopping_intervals:
        if lo - 1e-12 <= x <= hi + 1e-12:
            contacts = [float(x)]
            break
    if not contacts:
        for (sv, gv) in (sol.hull_vertices[k:k + 2] if k + 1 < len(sol.hull_vertices)
                         else sol.hull_vertices[k:k + 1]):
            i = int(np.argmin(np.abs(sarr - sv)))
            if abs(sarr[i] - sv) <= 1e-9 * (1 + abs(sv)):
                contacts.append(float(g.nodes[i]))
    return {"v": vx, "A": float(A), "B": float(B), "contacts": contacts}


def verify_solution(prob, fp: FundamentalPair, rew: Reward, w: GridFunction,
                    limits, tol: float = 1e-6):
    """Certificate checks for a candidate value function w:
    majorization of fbar, negativity of L w, no L w mass on {w > fbar},
    and the boundary ratio conditions.  Passing all four certifies that
    w is the value function."""
    x = fp.grid.nodes
    fbar = rew.f_bar.values
    scale = float(np.max(np.abs(w.values))) or 1.0

    gap = w.values - fbar
    majorize_worst = float(np.min(gap))
    majorize_ok = majorize_worst >= -tol * scale

    mu = apply_L(prob, fp, w)
    pos_density = np.maximum(mu.density, 0.0)
    pos_mass = float(np.trapz(pos_density, x))
    pos_mass += sum(m for _, m in mu.atoms if m > tol * scale)
    negativity_ok = pos_mass <= tol * scale
    worst_pos = (float(x[int(np.argmax(pos_density))]), float(np.max(pos_density)))

    strict = gap > tol * scale * 10.0
    # mass of |L w| restricted to the strict-majorization set
    charge = float(np.trapz(np.abs(mu.density) * strict, x))
    for loc, m in mu.atoms:
        i = fp.grid.index_of(loc)
        if i is not None and strict[i]:
            charge += abs(m)
    no_charge_ok = charge <= tol * scale * 10.0

    limA, limB = limits
    wl = float(w.values[0] / fp.phi.values[0])
    wr = float(w.values[-1] / fp.psi.values[-1]) if fp.psi.values[-1] > 0 else 0.0
    left_ok = abs(wl - limA) <= tol * (1.0 + abs(limA)) * 100.0
    right_ok = abs(wr - limB) <= tol * (1.0 + abs(limB)) * 100.0

    checks = {
        "majorizes_reward": {"ok": bool(majorize_ok), "worst": majorize_worst},
        "L_nonpositive": {"ok": bool(negativity_ok), "positive_mass": pos_mass,
                          "worst": worst_pos},
        "no_charge_on_strict_set": {"ok": bool(no_charge_ok), "charge": charge},
        "left_boundary": {"ok": bool(left_ok), "ratio": wl, "target": limA},
        "right_boundary": {"ok": bool(right_ok), "ratio": wr, "target": limB},
    }
    checks["certified"] = bool(all(c["ok"] for c in checks.values()
                                   if isinstance(c, dict)))
    return checks


def smooth_fit_report(prob, fp: FundamentalPair, rew: Reward,
                      sol: ValueSolution, tol: float = 1e-3):
    """Slope chains f'+ <= v'+ <= v'- <= f'- at every interior waiting
    boundary.  Boundaries where the reward jumps are reported as
    non-differentiable and skipped."""
    out = []
    x = fp.grid.nodes
    for w in sol.waiting:
        for side, y in (("c", w["c"]), ("d", w["d"])):
            if y is None or not np.isfinite(y):
                continue
            if y <= x[0] + 1e-12 or y >= x[-1] - 1e-12:
                continue
            entry = {"x": float(y)}
            if rew.f is not None:
                left, right, value = exprlang.one_sided_limits(
                    rew.f, rew.breakpoints, y)
                if abs(left - value) > tol * (1 + abs(value)) or \
                        abs(right - value) > tol * (1 + abs(value)):
                    entry.update({"differentiable": False, "ok": None})
                    out.append(entry)
                    continue
                f_plus = exprlang.one_sided_derivative(rew.f, y, +1)
                f_minus = exprlang.one_sided_derivative(rew.f, y, -1)
            else:
                i = fp.grid.index_of(y) or 0
                f_plus = float(rew.f_bar.right_slopes[i])
                f_minus = float(rew.f_bar.left_slopes[i])
            dphi = float(np.interp(y, x, fp.phi.right_slopes))
            dpsi = float(np.interp(y, x, fp.psi.right_slopes))
            edge_slope = w["A"] * dphi + w["B"] * dpsi
            if side == "c":
                v_minus, v_plus = f_minus, edge_slope
            else:
                v_minus, v_plus = edge_slope, f_plus
            chain_ok = (f_plus <= v_plus + tol and v_plus <= v_minus + tol
                        and v_minus <= f_minus + tol)
            entry.update({"differentiable": True,
                          "f_plus": float(f_plus), "v_plus": float(v_plus),
                          "v_minus": float(v_minus), "f_minus": float(f_minus),
                          "ok": bool(chain_ok)})
            out.append(entry)
    return out


def solve_with_running_reward(prob, fp: FundamentalPair, h, rew: Reward,
                              tol_contact: float = DEFAULT_TOL_CONTACT):
    """Split a problem paying h along the way into its potential plus a
    terminal problem with the reduced reward (fbar - R)^+."""
    R = potential_ac(prob, fp, h)
    aux_vals = np.maximum(rew.f_bar.values - R.R.values, 0.0)
    aux = Reward(f=None, breakpoints=rew.breakpoints,
                 f_bar=GridFunction.from_values(fp.grid, aux_vals),
                 f_at_absorbing=rew.f_at_absorbing)
    sol = solve(prob, fp, aux, tol_contact=tol_contact)
    v_total = R.R.plus(sol.v)
    return {"v_total": v_total, "sol": sol, "potential": R}
