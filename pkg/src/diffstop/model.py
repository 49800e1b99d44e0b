"""Problem data: SDE coefficients, discounting, state interval, reward.

Endpoints are either inaccessible (never reached, interval open there)
or absorbing (reached and sticky, interval closed there).  Validation
samples the standing assumptions on a probe grid; the boundary
classification itself is user-declared, with a numerical consistency
check available as a diagnostic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .errors import (
    ConfigError,
    LocalIntegrabilityFailure,
    NegativeReward,
    NonPositiveSigma,
    RateBelowFloor,
)

INTEGRABILITY_CUTOFF = 1e12


class BoundaryKind(enum.Enum):
    INACCESSIBLE = "inaccessible"
    ABSORBING = "absorbing"


@dataclass(frozen=True)
class DiffusionProblem:
    """Validated optimal stopping problem.

    Immutable after construction; safe to share across threads.
    An absorbing endpoint belongs to the state interval (and must be
    finite), an inaccessible one does not.
    """

    alpha: float                      # left endpoint, may be -inf
    beta: float                       # right endpoint, may be +inf
    left: BoundaryKind
    right: BoundaryKind
    b: exprlang.Expr                  # drift, state/time
    sigma: exprlang.Expr              # diffusion, state/sqrt(time)
    r: exprlang.Expr                  # discount rate, 1/time
    reward_f: exprlang.Expr
    reward_breakpoints: exprlang.Breakpoints
    r_floor: float
    f_at_alpha: float | None = None   # reward at an absorbing left endpoint
    f_at_beta: float | None = None
    constants: dict = field(default_factory=dict)

    def sigma2(self, x):
        s = exprlang.evaluate(self.sigma, x)
        return s * s

    def absorbing_left(self):
        return self.left is BoundaryKind.ABSORBING

    def absorbing_right(self):
        return self.right is BoundaryKind.ABSORBING


def _probe_nodes(alpha, beta, breakpoints, n=512):
    """Finite sample points inside ]alpha, beta[ for validation."""
    lo = alpha if math.isfinite(alpha) else min(-8.0, *(list(breakpoints) or [0.0])) - 1.0
    hi = beta if math.isfinite(beta) else max(8.0, *(list(breakpoints) or [0.0])) + 1.0
    if math.isfinite(alpha) and not math.isfinite(beta):
        hi = max(hi, alpha + 16.0)
    if math.isfinite(beta) and not math.isfinite(alpha):
        lo = min(lo, beta - 16.0)
    width = hi - lo
    # keep strictly interior: inaccessible finite endpoints are singular
    pts = np.linspace(lo + 1e-6 * width, hi - 1e-6 * width, n)
    if alpha > 0 and not math.isfinite(beta):
        # positive half-line problems probe on a log scale
        pts = np.geomspace(max(alpha, 1e-6) * (1 + 1e-6) if alpha > 0 else 1e-6, hi, n)
    return pts


def build_problem(config):
    """Build and validate a DiffusionProblem from a parsed config dict.

    Checks, on a probe grid: sigma^2 > 0, r >= r_floor > 0, the local
    integrability of (1+|b|)/sigma^2 and r/sigma^2 (trapezoid sums below
    a divergence cutoff), and f >= 0.  Violations are reported with the
    offending location.
    """
    constants = dict(config.get("constants", {}))
    try:
        b = exprlang.parse(config["b"], constants)
        sigma = exprlang.parse(config["sigma"], constants)
        r = exprlang.parse(config["r"], constants)
        f = exprlang.parse(config["reward"]["f"], constants)
    except KeyError as exc:
        raise ConfigError(f"missing problem key: {exc}") from exc

    interval = config["interval"]
    alpha = float(interval["lo"])
    beta = float(interval["hi"])
    if not alpha < beta:
        raise ConfigError(f"need lo < hi, got [{alpha}, {beta}]")
    left = BoundaryKind(interval.get("left", "inaccessible"))
    right = BoundaryKind(interval.get("right", "inaccessible"))
    if left is BoundaryKind.ABSORBING and not math.isfinite(alpha):
        raise ConfigError("an absorbing left endpoint must be finite")
    if right is BoundaryKind.ABSORBING and not math.isfinite(beta):
        raise ConfigError("an absorbing right endpoint must be finite")

    breakpoints = exprlang.Breakpoints(config["reward"].get("breakpoints", ()))
    for p in breakpoints:
        if not (alpha < p < beta):
            raise ConfigError(f"breakpoint {p} outside ]{alpha}, {beta}[")

    nodes = _probe_nodes(alpha, beta, breakpoints)
    sig2 = exprlang.evaluate(sigma, nodes) ** 2
    bad = ~(sig2 > 0) | ~np.isfinite(sig2)
    if bad.any():
        raise NonPositiveSigma(float(nodes[np.argmax(bad)]))

    rv = exprlang.evaluate(r, nodes)
    r_floor = config.get("r_floor")
    if r_floor is None:
        r_floor = 0.5 * float(np.min(rv))
    r_floor = float(r_floor)
    if r_floor <= 0:
        raise RateBelowFloor(float(nodes[np.argmin(rv)]), float(np.min(rv)), r_floor)
    low = rv < r_floor
    if low.any():
        i = int(np.argmax(low))
        raise RateBelowFloor(float(nodes[i]), float(rv[i]), r_floor)

    bv = exprlang.evaluate(b, nodes)
    for name, integrand in (("(1+|b|)/sigma^2", (1.0 + np.abs(bv)) / sig2),
                            ("r/sigma^2", rv / sig2)):
        total = np.trapz(integrand, nodes)
        if not np.isfinite(total) or total > INTEGRABILITY_CUTOFF:
            raise LocalIntegrabilityFailure(float(nodes[0]), float(nodes[-1]), name)

    fv = exprlang.evaluate(f, nodes)
    neg = fv < 0
    if neg.any() or not np.isfinite(fv).all():
        i = int(np.argmax(neg)) if neg.any() else int(np.argmax(~np.isfinite(fv)))
        raise NegativeReward(float(nodes[i]), float(fv[i]))

    f_at_alpha = config["reward"].get("f_at_lo")
    f_at_beta = config["reward"].get("f_at_hi")
    if left is BoundaryKind.ABSORBING and f_at_alpha is None:
        f_at_alpha = float(exprlang.evaluate(f, alpha))
    if right is BoundaryKind.ABSORBING and f_at_beta is None:
        f_at_beta = float(exprlang.evaluate(f, beta))

    return DiffusionProblem(
        alpha=alpha, beta=beta, left=left, right=right,
        b=b, sigma=sigma, r=r,
        reward_f=f, reward_breakpoints=breakpoints,
        r_floor=r_floor,
        f_at_alpha=None if f_at_alpha is None else float(f_at_alpha),
        f_at_beta=None if f_at_beta is None else float(f_at_beta),
        constants=constants,
    )


def feller_boundary_check(prob, end, grid):
    """Advisory consistency check of a declared boundary kind.

    The explosion test integrates p'(x) * M(x) toward the endpoint,
    where M is the speed mass accumulated from the reference node; the
    endpoint is reachable exactly when that integral converges.  The
    integral is evaluated over geometric shells of the grid: shell sums
    that fail to decay toward the endpoint indicate divergence, i.e. an
    inaccessible endpoint.  The declaration always wins; this only flags
    a mismatch.

    Returns {"consistent": bool, "explosion_integral": float}.
    """
    from . import exprlang as _el
    from .odecore import Grid, scale_function, speed_density  # local import, no cycle

    # drop nodes where the coefficients degenerate (an absorbing endpoint
    # may sit exactly on a zero of sigma)
    xn = grid.nodes
    s2 = prob.sigma2(xn)
    bv = _el.evaluate(prob.b, xn)
    keep = np.isfinite(s2) & (s2 > 0) & np.isfinite(bv)
    if not keep.all():
        xn = xn[keep]
        ref = int(np.argmin(np.abs(xn - grid.nodes[grid.ref_index])))
        grid = Grid(nodes=xn, breakpoints=(), spacing=grid.spacing,
                    ref_index=min(max(ref, 1), len(xn) - 2))

    p = scale_function(prob, grid)
    m = speed_density(prob, p)
    x = grid.nodes
    ci = grid.ref_index
    if end == "left":
        kind = prob.left
        endpoint = prob.alpha
        xs = x[:ci + 1][::-1]          # from ref toward the endpoint
        dp = p.right_slopes[:ci + 1][::-1]
        mv = m.values[:ci + 1][::-1]
    elif end == "right":
        kind = prob.right
        endpoint = prob.beta
        xs = x[ci:]
        dp = p.right_slopes[ci:]
        mv = m.values[ci:]
    else:
        raise ValueError("end must be 'left' or 'right'")

    steps = np.abs(np.diff(xs))
    mass = np.concatenate([[0.0], np.cumsum(0.5 * (mv[1:] + mv[:-1]) * steps)])
    integrand = dp * mass
    total = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * steps))

    # geometric shells in the distance coordinate that approaches the
    # endpoint: distance to it when finite, distance from the reference
    # when infinite
    if math.isfinite(endpoint):
        t = np.abs(xs - endpoint)
        toward_small_t = True
    else:
        t = np.abs(xs - xs[0])
        toward_small_t = False
    tmax = float(np.max(t))
    sums = []
    hi = tmax
    for _ in range(8):
        lo_t = hi / 2.0
        sel = (t > lo_t) & (t <= hi)
        if sel.sum() >= 2:
            order = np.argsort(xs[sel])
            seg = np.trapz(integrand[sel][order], xs[sel][order])
            sums.append(abs(seg))
        hi = lo_t
    # sums[0] holds the largest-t shell; orient along approach direction
    toward = sums if toward_small_t else sums[::-1]
    ratios = [b / a for a, b in zip(toward[:-1], toward[1:]) if a > 0]
    divergent = bool(ratios) and float(np.median(ratios)) >= 0.7
    declared_inaccessible = kind is BoundaryKind.INACCESSIBLE
    return {
        "consistent": divergent == declared_inaccessible,
        "explosion_integral": total,
    }
