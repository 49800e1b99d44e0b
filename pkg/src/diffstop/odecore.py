"""Working grid, scale function, speed density and the fundamental pair.

phi (strictly decreasing) and psi (strictly increasing) are positive
solutions of  (1/2) sigma^2 g'' + b g' - r g = 0,  normalized to 1 at a
reference node c.  Each is produced by one sweep in its own growth
direction:

* inaccessible truncation: the sweep integrates the Riccati equation
  u' = 2r/sigma^2 - (2b/sigma^2) u - u^2 for the log-derivative, started
  on the frozen-coefficient root.  Going with the growth direction the
  Riccati flow forgets the start exponentially, which suppresses the
  dominant-solution contamination that makes raw shooting against the
  grain explode; values come from exp of the accumulated integral, so
  positivity is structural and overflow lives in log space.

* absorbing endpoint: the boundary value is exact (psi(alpha) = 0), and
  the linear (g, g') sweep in the growth direction is stable; the state
  is rescaled whenever it grows past 1e150.

Both sweeps advance with classical RK4 over sub-steps of each cell,
with the running integral of u carried as an extra state component.
Slopes come from the sweep state itself, never from differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .errors import (
    ConfigError,
    DegenerateBracket,
    MonotonicityViolation,
    NonConvergence,
    OutOfSpan,
    OverflowInExponent,
    TruncationFailure,
)
from .model import DiffusionProblem

DEFAULT_TAIL_TOL = 1e-8
_WRONSKIAN_RAISE = 1e-3
_RESCALE_AT = 1e150


# --- grid -------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    nodes: np.ndarray          # strictly increasing, inside [alpha, beta]
    breakpoints: tuple         # reward breakpoints present as nodes
    spacing: str               # "linear" or "log"
    ref_index: int             # normalization node for p, phi, psi

    @property
    def left_trunc(self):
        return float(self.nodes[0])

    @property
    def right_trunc(self):
        return float(self.nodes[-1])

    @property
    def h(self):
        return np.diff(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def index_of(self, x, tol_cells=0.5):
        """Index of the node nearest x; None if farther than tol_cells cells."""
        i = int(np.argmin(np.abs(self.nodes - x)))
        h_local = self.h[min(i, len(self.h) - 1)]
        if abs(self.nodes[i] - x) <= tol_cells * h_local:
            return i
        return None


@dataclass
class GridFunction:
    """Node values with one-sided slopes; the common currency of the
    package's calculus.  Smooth functions carry equal slopes."""

    grid: Grid
    values: np.ndarray
    left_slopes: np.ndarray
    right_slopes: np.ndarray

    @classmethod
    def smooth(cls, grid, values, slopes):
        s = np.asarray(slopes, dtype=float)
        return cls(grid, np.asarray(values, dtype=float), s, s.copy())

    @classmethod
    def from_values(cls, grid, values):
        """Piecewise-linear function through the node values."""
        v = np.asarray(values, dtype=float)
        x = grid.nodes
        cell = np.diff(v) / np.diff(x)
        left = np.empty_like(v)
        right = np.empty_like(v)
        left[1:] = cell
        left[0] = cell[0]
        right[:-1] = cell
        right[-1] = cell[-1]
        return cls(grid, v, left, right)

    @classmethod
    def from_expr(cls, grid, e, breakpoints=()):
        """Sample an expression; slopes by central differences, with
        branch-exact one-sided slopes at declared breakpoints."""
        x = grid.nodes
        v = exprlang.evaluate(e, x)
        step = 1e-6 * np.maximum(1.0, np.abs(x))
        d = (exprlang.evaluate(e, x + step) - exprlang.evaluate(e, x - step)) / (2 * step)
        gf = cls(grid, v, d.copy(), d.copy())
        for p in breakpoints:
            i = grid.index_of(p)
            if i is None:
                continue
            gf.left_slopes[i] = exprlang.one_sided_derivative(e, x[i], -1)
            gf.right_slopes[i] = exprlang.one_sided_derivative(e, x[i], +1)
        return gf

    def __call__(self, xq):
        return self.interp(xq)

    def interp(self, xq):
        """C^1 cubic Hermite interpolation using the one-sided slopes on
        each cell (right slope at the left node, left slope at the right)."""
        x = self.grid.nodes
        xq_arr = np.atleast_1d(np.asarray(xq, dtype=float))
        i = np.clip(np.searchsorted(x, xq_arr) - 1, 0, len(x) - 2)
        h = x[i + 1] - x[i]
        t = (xq_arr - x[i]) / h
        y0, y1 = self.values[i], self.values[i + 1]
        m0, m1 = self.right_slopes[i] * h, self.left_slopes[i + 1] * h
        t2, t3 = t * t, t * t * t
        out = ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0
               + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1)
        return out if np.ndim(xq) else float(out[0])

    def scaled(self, a):
        return GridFunction(self.grid, a * self.values,
                            a * self.left_slopes, a * self.right_slopes)

    def plus(self, other):
        return GridFunction(self.grid, self.values + other.values,
                            self.left_slopes + other.left_slopes,
                            self.right_slopes + other.right_slopes)


def build_grid(prob: DiffusionProblem, n_nodes: int, trunc_policy=None,
               spacing: str = "linear", tail_tol: float = DEFAULT_TAIL_TOL,
               ref_point: float = None) -> Grid:
    """Working grid over the truncated span, breakpoints inserted.

    trunc_policy: (lo, hi) for explicit bounds, or None for automatic
    extension until psi/phi at the left and phi/psi at the right drop
    below tail_tol (absorbing endpoints are pinned to the endpoint).
    """
    if n_nodes < 64:
        raise ConfigError(f"n_nodes must be >= 64, got {n_nodes}")
    if spacing not in ("linear", "log"):
        raise ConfigError(f"spacing must be linear or log, got {spacing!r}")

    if trunc_policy is not None:
        lo, hi = float(trunc_policy[0]), float(trunc_policy[1])
        if not (prob.alpha <= lo < hi <= prob.beta):
            raise ConfigError(f"truncation [{lo}, {hi}] outside [{prob.alpha}, {prob.beta}]")
    else:
        lo, hi = _auto_truncate(prob, spacing, tail_tol)

    if spacing == "log":
        if lo <= 0:
            raise ConfigError("log spacing needs a positive span")
        base = np.geomspace(lo, hi, n_nodes)
    else:
        base = np.linspace(lo, hi, n_nodes)

    pts = [p for p in prob.reward_breakpoints if lo < p < hi]
    nodes = _dedup(np.sort(np.concatenate([base, np.asarray(pts, dtype=float)])))

    # at least 3 nodes strictly between consecutive breakpoints
    anchors = sorted(set([lo, hi] + pts))
    extra = []
    for a, b in zip(anchors, anchors[1:]):
        gap_tol = 1e-9 * max(abs(a), abs(b), 1.0)
        inside = ((nodes > a + gap_tol) & (nodes < b - gap_tol)).sum()
        if inside < 3:
            extra.extend(np.linspace(a, b, 5)[1:-1])
    if extra:
        nodes = _dedup(np.sort(np.concatenate([nodes, extra])))

    if ref_point is None:
        ref_point = math.sqrt(lo * hi) if spacing == "log" else 0.5 * (lo + hi)
    ref_index = int(np.argmin(np.abs(nodes - ref_point)))
    ref_index = min(max(ref_index, 1), len(nodes) - 2)
    return Grid(nodes=nodes, breakpoints=tuple(pts), spacing=spacing,
                ref_index=ref_index)


def _dedup(nodes):
    """Drop nodes coincident up to rounding (tolerance relative to the
    node magnitude, so log grids keep their fine left end)."""
    keep = np.ones(len(nodes), dtype=bool)
    tol = 1e-9 * np.maximum(np.abs(nodes[1:]), 1.0)
    keep[1:] = np.diff(nodes) > tol
    return nodes[keep]


def _auto_truncate(prob, spacing, tail_tol, budget=60):
    """Extend the span until the fundamental ratios decay below tail_tol.

    Works on coarse Riccati sweeps; ln(psi/phi) is the integral of
    u_psi - u_phi, so the left condition is
    int_L^c (u_psi - u_phi) >= ln(1/tail_tol), symmetrically right.
    """
    target = math.log(1.0 / tail_tol)
    if spacing == "log":
        c = 1.0 if prob.alpha < 1.0 < prob.beta else math.sqrt(
            max(prob.alpha, 1e-8) * min(prob.beta, 1e8))
        lo, hi = c / 2.0, c * 2.0
    else:
        finite_lo = math.isfinite(prob.alpha)
        finite_hi = math.isfinite(prob.beta)
        if finite_lo and finite_hi:
            c = 0.5 * (prob.alpha + prob.beta)
        elif finite_lo:
            c = prob.alpha + 1.0
        elif finite_hi:
            c = prob.beta - 1.0
        else:
            c = 0.0
        lo, hi = c - 1.0, c + 1.0

    lo_fixed = prob.absorbing_left()
    hi_fixed = prob.absorbing_right()
    if lo_fixed:
        lo = prob.alpha
    if hi_fixed:
        hi = prob.beta

    for _ in range(budget):
        if not lo_fixed and math.isfinite(prob.alpha):
            lo = max(lo, prob.alpha + (c - prob.alpha) * 1e-12)
        if not hi_fixed and math.isfinite(prob.beta):
            hi = min(hi, prob.beta - (prob.beta - c) * 1e-12)
        nodes = (np.geomspace(lo, hi, 257) if spacing == "log"
                 else np.linspace(lo, hi, 257))
        ci = int(np.argmin(np.abs(nodes - c)))
        ci = min(max(ci, 1), len(nodes) - 2)
        u, iu = _riccati_nodes(prob, nodes, "psi")
        v, iv = _riccati_nodes(prob, nodes, "phi")
        # ln(psi/phi)(x) - ln(psi/phi)(c), up to sweep transients
        ln_ratio = (iu - iu[ci]) - (iv - iv[ci])
        ok_left = lo_fixed or (np.isfinite(ln_ratio[0]) and ln_ratio[0] <= -target)
        ok_right = hi_fixed or (np.isfinite(ln_ratio[-1]) and ln_ratio[-1] >= target)
        if ok_left and ok_right:
            return float(lo), float(hi)
        if not ok_left:
            lo = (prob.alpha + (lo - prob.alpha) / 2.0 if math.isfinite(prob.alpha)
                  else c - 2.0 * (c - lo))
        if not ok_right:
            hi = (prob.beta - (prob.beta - hi) / 2.0 if math.isfinite(prob.beta)
                  else c + 2.0 * (hi - c))
    raise TruncationFailure(f"automatic truncation did not reach tail_tol={tail_tol} "
                            f"within {budget} extensions")


def _riccati_nodes(prob, nodes, which):
    """Coarse Riccati sweep on raw nodes; returns (u, int u dx) at nodes."""
    lad_a, lad_b = _coefficient_ladders(prob, nodes, substeps=1)
    if which == "psi":
        u0 = _frozen_root(prob, nodes[0], +1)
        return _riccati_sweep(lad_a, lad_b, np.diff(nodes), u0, forward=True, substeps=1)
    u0 = _frozen_root(prob, nodes[-1], -1)
    return _riccati_sweep(lad_a, lad_b, np.diff(nodes), u0, forward=False, substeps=1)


# --- scale and speed ---------------------------------------------------

def scale_function(prob: DiffusionProblem, g: Grid) -> GridFunction:
    """Scale p(x) = int_c^x exp(-2 int_c^s b/sigma^2) ds by nested
    composite trapezoid on the grid nodes; p(c) = 0, p' > 0."""
    x = g.nodes
    integrand = 2.0 * exprlang.evaluate(prob.b, x) / prob.sigma2(x)
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(x))])
    inner -= inner[g.ref_index]
    if np.max(np.abs(inner)) > 700.0:
        raise OverflowInExponent(
            "exponent of the scale density exceeds 700; shrink the truncation span")
    dp = np.exp(-inner)
    p = np.concatenate([[0.0], np.cumsum(0.5 * (dp[1:] + dp[:-1]) * np.diff(x))])
    p -= p[g.ref_index]
    return GridFunction.smooth(g, p, dp)


def speed_density(prob: DiffusionProblem, scale: GridFunction) -> GridFunction:
    """Density of the speed measure, 2/(sigma^2 p')."""
    g = scale.grid
    x = g.nodes
    m = 2.0 / (prob.sigma2(x) * scale.right_slopes)
    return GridFunction.smooth(g, m, np.gradient(m, x))


# --- sweeps ------------------------------------------------------------

def _frozen_root(prob, x, sign):
    """Root of (1/2) sigma^2 u^2 + b u - r = 0 at frozen coefficients;
    sign +1 gives the increasing-solution branch, -1 the decreasing."""
    s2 = float(prob.sigma2(x))
    b = float(exprlang.evaluate(prob.b, x))
    r = float(exprlang.evaluate(prob.r, x))
    disc = math.sqrt(b * b + 2.0 * s2 * r)
    return (-b + sign * disc) / s2


def _corrected_root(prob, x, sign, h):
    """Frozen root with the quasi-static first-order correction
    u ~= u* - u*' / (2b/sigma^2 + 2 u*), which shrinks the start-up
    transient when coefficients vary."""
    u = _frozen_root(prob, x, sign)
    d = 1e-4 * max(abs(x), abs(h), 1e-8)
    try:
        du = (_frozen_root(prob, x + d, sign) - _frozen_root(prob, x - d, sign)) / (2 * d)
    except (ValueError, ZeroDivisionError):
        return u
    denom = 2.0 * float(exprlang.evaluate(prob.b, x)) / float(prob.sigma2(x)) + 2.0 * u
    if denom == 0.0 or not math.isfinite(du):
        return u
    corr = -du / denom
    if abs(corr) > 0.5 * abs(u):
        return u
    return u + corr


def _decay_rate(prob, x):
    """Local separation of the two Riccati branches; the start-up
    transient of a sweep dies like exp(-int rate)."""
    s2 = float(prob.sigma2(x))
    b = float(exprlang.evaluate(prob.b, x))
    r = float(exprlang.evaluate(prob.r, x))
    return 2.0 * math.sqrt(b * b + 2.0 * s2 * r) / s2


def _run_in(prob, g, side, budget=14.0):
    """Extension nodes beyond an inaccessible truncation so the sweep's
    start-up transient has decayed by exp(-budget) before entering the
    working span.  Returns an ascending array strictly outside the span
    (possibly empty)."""
    nodes = g.nodes
    cap = max(64, len(nodes) // 4)
    pts = []
    decay = 0.0
    if side == "left":
        x = float(nodes[0])
        ratio = nodes[1] / nodes[0] if g.spacing == "log" else None
        h = float(nodes[1] - nodes[0])
        endpoint = prob.alpha
    else:
        x = float(nodes[-1])
        ratio = nodes[-1] / nodes[-2] if g.spacing == "log" else None
        h = float(nodes[-1] - nodes[-2])
        endpoint = prob.beta
    for _ in range(cap):
        if side == "left":
            nxt = x / ratio if ratio else x - h
            if math.isfinite(endpoint) and nxt <= endpoint:
                nxt = endpoint + 0.5 * (x - endpoint)
        else:
            nxt = x * ratio if ratio else x + h
            if math.isfinite(endpoint) and nxt >= endpoint:
                nxt = endpoint - 0.5 * (endpoint - x)
        try:
            rate = _decay_rate(prob, 0.5 * (x + nxt))
        except (ValueError, ZeroDivisionError):
            break
        if not math.isfinite(rate) or rate <= 0:
            break
        step = abs(nxt - x)
        if step <= 1e-14 * max(abs(x), 1.0):
            break
        decay += rate * step
        pts.append(nxt)
        x = nxt
        if decay >= budget:
            break
    pts = np.asarray(pts[::-1] if side == "left" else pts, dtype=float)
    return pts


def _coefficient_ladders(prob, nodes, substeps):
    """Sample A = 2r/sigma^2 and B = 2b/sigma^2 on the per-cell ladder of
    2*substeps+1 equally spaced points (all RK4 stage abscissae)."""
    m = 2 * substeps + 1
    offsets = np.linspace(0.0, 1.0, m)
    h = np.diff(nodes)
    pts = nodes[:-1, None] + offsets[None, :] * h[:, None]
    flat = pts.ravel()
    s2 = prob.sigma2(flat)
    a = (2.0 * exprlang.evaluate(prob.r, flat) / s2).reshape(pts.shape)
    b = (2.0 * exprlang.evaluate(prob.b, flat) / s2).reshape(pts.shape)
    return a, b


def _riccati_sweep(lad_a, lad_b, h, u0, forward, substeps):
    """RK4 sweep of (u, I) with u' = A - B u - u^2, I' = u.

    Returns u and I at the nodes, I anchored to 0 at the sweep start.
    """
    ncells = len(h)
    n = ncells + 1
    u_out = np.empty(n)
    i_out = np.empty(n)
    a_list = lad_a.tolist()
    b_list = lad_b.tolist()
    h_list = h.tolist()

    if forward:
        cells = range(ncells)
        start = 0
    else:
        cells = range(ncells - 1, -1, -1)
        start = n - 1
    u, integ = float(u0), 0.0
    u_out[start] = u
    i_out[start] = 0.0
    for ci in cells:
        arow = a_list[ci]
        brow = b_list[ci]
        hh = h_list[ci] / substeps
        if not forward:
            hh = -hh
        for j in range(substeps):
            if forward:
                k0, k1, k2 = 2 * j, 2 * j + 1, 2 * j + 2
            else:
                k0 = 2 * (substeps - j)
                k1 = k0 - 1
                k2 = k0 - 2
            a0, b0 = arow[k0], brow[k0]
            am, bm = arow[k1], brow[k1]
            a1, b1 = arow[k2], brow[k2]
            f1 = a0 - b0 * u - u * u
            u2 = u + 0.5 * hh * f1
            f2 = am - bm * u2 - u2 * u2
            u3 = u + 0.5 * hh * f2
            f3 = am - bm * u3 - u3 * u3
            u4 = u + hh * f3
            f4 = a1 - b1 * u4 - u4 * u4
            # RK4 of the augmented state (u, I) with I' = u collapses to
            # this quadrature for the integral component
            integ += hh * u + hh * hh * (f1 + f2 + f3) / 6.0
            u += hh * (f1 + 2.0 * f2 + 2.0 * f3 + f4) / 6.0
        idx = ci + 1 if forward else ci
        u_out[idx] = u
        i_out[idx] = integ
    return u_out, i_out


def _linear_sweep(lad_a, lad_b, h, y0, yp0, forward, substeps):
    """RK4 sweep of the raw system (g, g') with g'' = A g - B g',
    rescaled whenever the state passes 1e150.

    Returns (g, g', log_scale) at the nodes.
    """
    ncells = len(h)
    n = ncells + 1
    g_out = np.empty(n)
    gp_out = np.empty(n)
    ls_out = np.empty(n)
    a_list = lad_a.tolist()
    b_list = lad_b.tolist()
    h_list = h.tolist()

    if forward:
        cells = range(ncells)
        start = 0
    else:
        cells = range(ncells - 1, -1, -1)
        start = n - 1
    y, yp, ls = float(y0), float(yp0), 0.0
    g_out[start], gp_out[start], ls_out[start] = y, yp, ls
    for ci in cells:
        arow = a_list[ci]
        brow = b_list[ci]
        hh = h_list[ci] / substeps
        if not forward:
            hh = -hh
        for j in range(substeps):
            if forward:
                k0, k1, k2 = 2 * j, 2 * j + 1, 2 * j + 2
            else:
                k0 = 2 * (substeps - j)
                k1 = k0 - 1
                k2 = k0 - 2
            a0, b0 = arow[k0], brow[k0]
            am, bm = arow[k1], brow[k1]
            a1, b1 = arow[k2], brow[k2]
            f1y, f1p = yp, a0 * y - b0 * yp
            y2, p2 = y + 0.5 * hh * f1y, yp + 0.5 * hh * f1p
            f2y, f2p = p2, am * y2 - bm * p2
            y3, p3 = y + 0.5 * hh * f2y, yp + 0.5 * hh * f2p
            f3y, f3p = p3, am * y3 - bm * p3
            y4, p4 = y + hh * f3y, yp + hh * f3p
            f4y, f4p = p4, a1 * y4 - b1 * p4
            y += hh * (f1y + 2 * f2y + 2 * f3y + f4y) / 6.0
            yp += hh * (f1p + 2 * f2p + 2 * f3p + f4p) / 6.0
        mag = max(abs(y), abs(yp))
        if mag > _RESCALE_AT:
            y /= mag
            yp /= mag
            ls += math.log(mag)
        idx = ci + 1 if forward else ci
        g_out[idx], gp_out[idx], ls_out[idx] = y, yp, ls
    return g_out, gp_out, ls_out


# --- fundamental pair ---------------------------------------------------

@dataclass
class FundamentalPair:
    grid: Grid
    p: GridFunction
    m_density: GridFunction
    phi: GridFunction
    psi: GridFunction
    C: float
    c: float
    wronskian_resid: float = 0.0
    s_ratio: np.ndarray = field(default=None, repr=False)

    def phi_at(self, x):
        return self.phi.interp(x)

    def psi_at(self, x):
        return self.psi.interp(x)

    def to_csv(self, path):
        cols = np.column_stack([
            self.grid.nodes, self.p.values, self.m_density.values,
            self.phi.values, self.psi.values,
            self.phi.right_slopes, self.psi.right_slopes])
        with open(path, "w", newline="") as fh:
            fh.write("x,p,m_density,phi,psi,dphi,dpsi\r\n")
            for row in cols:
                fh.write(",".join(repr(float(v)) for v in row) + "\r\n")


def _build_solution(prob, g, which, substeps):
    """One solution (values, slopes) normalized at the reference node."""
    n = len(g)
    ci = g.ref_index
    if which == "psi" and prob.absorbing_left():
        lad_a, lad_b = _coefficient_ladders(prob, g.nodes, substeps)
        y, yp, ls = _linear_sweep(lad_a, lad_b, g.h, 0.0, 1.0, True, substeps)
        if not (y[1:] > 0).all() or not (yp > 0).all():
            raise MonotonicityViolation("psi sweep lost monotonicity")
        log_ref = math.log(y[ci]) + ls[ci]
        vals = y * np.exp(ls - log_ref)
        slopes = yp * np.exp(ls - log_ref)
        if not np.isfinite(vals).all():
            raise OverflowInExponent("psi overflows after normalization; "
                                     "shrink the truncation")
        return vals, slopes
    if which == "phi" and prob.absorbing_right():
        lad_a, lad_b = _coefficient_ladders(prob, g.nodes, substeps)
        y, yp, ls = _linear_sweep(lad_a, lad_b, g.h, 0.0, -1.0, False, substeps)
        if not (y[:-1] > 0).all() or not (yp < 0).all():
            raise MonotonicityViolation("phi sweep lost monotonicity")
        log_ref = math.log(y[ci]) + ls[ci]
        vals = y * np.exp(ls - log_ref)
        slopes = yp * np.exp(ls - log_ref)
        if not np.isfinite(vals).all():
            raise OverflowInExponent("phi overflows after normalization; "
                                     "shrink the truncation")
        return vals, slopes

    # inaccessible truncation: Riccati sweep with run-in
    if which == "psi":
        ext = _run_in(prob, g, "left")
        nodes = np.concatenate([ext, g.nodes]) if len(ext) else g.nodes
        lad_a, lad_b = _coefficient_ladders(prob, nodes, substeps)
        u0 = _corrected_root(prob, nodes[0], +1, nodes[1] - nodes[0])
        u, integ = _riccati_sweep(lad_a, lad_b, np.diff(nodes), u0, True, substeps)
        u, integ = u[len(ext):], integ[len(ext):]
        if not (u > 0).all():
            raise MonotonicityViolation("psi log-derivative lost positivity")
    else:
        ext = _run_in(prob, g, "right")
        nodes = np.concatenate([g.nodes, ext]) if len(ext) else g.nodes
        lad_a, lad_b = _coefficient_ladders(prob, nodes, substeps)
        u0 = _corrected_root(prob, nodes[-1], -1, nodes[-1] - nodes[-2])
        u, integ = _riccati_sweep(lad_a, lad_b, np.diff(nodes), u0, False, substeps)
        u, integ = u[:n], integ[:n]
        if not (u < 0).all():
            raise MonotonicityViolation("phi log-derivative lost negativity")
    logv = integ - integ[ci]
    if np.max(np.abs(logv)) > 700.0:
        raise OverflowInExponent(
            f"{which} spans more than e^700 over the grid; shrink the truncation")
    vals = np.exp(logv)
    return vals, u * vals


def fundamental_pair(prob: DiffusionProblem, g: Grid, substeps: int = 2) -> FundamentalPair:
    """Construct phi, psi, the Wronskian constant C and the scale/speed
    data on the grid.  Refines the sweep sub-stepping when the Wronskian
    identity phi psi' - phi' psi = C p' fails to hold."""
    p = scale_function(prob, g)
    m = speed_density(prob, p)

    tries = substeps
    last_resid = np.inf
    while True:
        psi_v, psi_d = _build_solution(prob, g, "psi", tries)
        phi_v, phi_d = _build_solution(prob, g, "phi", tries)
        w = phi_v * psi_d - phi_d * psi_v
        ci = g.ref_index
        c_const = w[ci] / p.right_slopes[ci]
        if c_const <= 0:
            raise MonotonicityViolation("Wronskian constant is not positive")
        resid = float(np.max(np.abs(w - c_const * p.right_slopes)
                             / (c_const * p.right_slopes)))
        if resid <= _WRONSKIAN_RAISE or tries >= 8:
            last_resid = resid
            break
        tries *= 2
    if last_resid > _WRONSKIAN_RAISE:
        raise NonConvergence(
            f"Wronskian residual {last_resid:.2e} after refinement to {tries} substeps")

    phi = GridFunction.smooth(g, phi_v, phi_d)
    psi = GridFunction.smooth(g, psi_v, psi_d)
    s = psi_v / phi_v
    if not (np.diff(s) > 0).all():
        raise MonotonicityViolation("psi/phi is not strictly increasing")
    return FundamentalPair(grid=g, p=p, m_density=m, phi=phi, psi=psi,
                           C=float(c_const), c=float(g.nodes[g.ref_index]),
                           wronskian_resid=last_resid, s_ratio=s)


# --- hitting functionals -------------------------------------------------

def hitting_transform(fp: FundamentalPair, x: float, y: float) -> float:
    """E_x[exp(-Lambda at the first hit of y)]: phi(x)/phi(y) for y < x,
    psi(x)/psi(y) for y > x, and 1 at y = x."""
    lo, hi = fp.grid.left_trunc, fp.grid.right_trunc
    if not (lo <= x <= hi and lo <= y <= hi):
        raise OutOfSpan(f"hitting_transform({x}, {y}) outside [{lo}, {hi}]")
    if x == y:
        return 1.0
    if y < x:
        return float(fp.phi_at(x) / fp.phi_at(y))
    return float(fp.psi_at(x) / fp.psi_at(y))


def laplace_hitting(fp: FundamentalPair, x: float, lo: float, hi: float):
    """Two-sided discounted hitting functionals from x with bracket
    (lo, hi): E_x[e^{-Lambda} ; lo hit first] and the symmetric one."""
    span_lo, span_hi = fp.grid.left_trunc, fp.grid.right_trunc
    if not (span_lo <= lo < x < hi <= span_hi):
        raise OutOfSpan(f"need {span_lo} <= lo < x < hi <= {span_hi}")
    phi_lo, phi_x, phi_hi = fp.phi_at(lo), fp.phi_at(x), fp.phi_at(hi)
    psi_lo, psi_x, psi_hi = fp.psi_at(lo), fp.psi_at(x), fp.psi_at(hi)
    denom = phi_hi * psi_lo - phi_lo * psi_hi
    scale = abs(phi_hi * psi_lo) + abs(phi_lo * psi_hi)
    if scale == 0.0 or abs(denom) < 1e-14 * scale:
        raise DegenerateBracket(f"bracket ({lo}, {hi}) is numerically degenerate")
    to_lo = (phi_hi * psi_x - phi_x * psi_hi) / denom
    to_hi = (phi_x * psi_lo - phi_lo * psi_x) / denom
    return float(to_lo), float(to_hi)


def ode_residual(prob: DiffusionProblem, fp: FundamentalPair):
    """Relative residual of the three-point discrete homogeneous ODE
    applied to phi and psi; a grid-refinement diagnostic."""
    x = fp.grid.nodes
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    out = []
    s2 = prob.sigma2(x[1:-1])
    bv = exprlang.evaluate(prob.b, x[1:-1])
    rv = exprlang.evaluate(prob.r, x[1:-1])
    for gf in (fp.phi, fp.psi):
        g = gf.values
        d2 = 2.0 * (g[:-2] / (h1 * (h1 + h2)) - g[1:-1] / (h1 * h2)
                    + g[2:] / (h2 * (h1 + h2)))
        d1 = (-h2 / (h1 * (h1 + h2)) * g[:-2]
              + (h2 - h1) / (h1 * h2) * g[1:-1]
              + h1 / (h2 * (h1 + h2)) * g[2:])
        res = 0.5 * s2 * d2 + bv * d1 - rv * g[1:-1]
        out.append(float(np.max(np.abs(res) / (rv * np.abs(g[1:-1])))))
    return tuple(out)
