"""Tests for discounted excessivity of a candidate function.

Two equivalent analytic routes are computed side by side: (a) the
measure route, which requires the positive part of L F to carry no
mass, and (b) the transformed concavity route, which requires F/phi to
be concave as a function of s = psi/phi.  The two verdicts must agree;
a disagreement surfaces as a diagnostic warning rather than silently
trusting one side.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .calculus import apply_L
from .errors import NegativeCandidate
from .odecore import FundamentalPair, GridFunction

MASS_TOL_REL = 1e-3    # positive L-mass below this (times max |F|) is noise


@dataclass
class ExcessivityReport:
    dc_ok: bool
    measure_ok: bool
    worst_violation: tuple          # (location, positive mass magnitude)
    boundary_ok: bool
    concave_test_ok: bool
    verdict: bool

    def to_json(self):
        d = asdict(self)
        d["worst_violation"] = {"location": self.worst_violation[0],
                                "magnitude": self.worst_violation[1]}
        return json.dumps(d, sort_keys=True)


def transformed_concavity_check(fp: FundamentalPair, F: GridFunction,
                                tol_rel: float = MASS_TOL_REL):
    """Monotonicity test of the negated left slope of F/phi in s = psi/phi.

    The slope of F/phi against s increases exactly where L F carries
    positive mass; each increase is converted back to measure units via
    d(slope) = (2 phi / (C sigma^2 p')) L F(dx), so the tolerance is
    shared with the measure route.

    Returns {"increasing_ok": bool, "worst_drop": float,
             "worst_location": float, "violation_mass": float}.
    """
    g = fp.grid
    s = fp.s_ratio
    gvals = F.values / fp.phi.values
    slopes = np.diff(gvals) / np.diff(s)
    rises = np.diff(slopes)                      # >0 violates concavity
    # convert slope increases at interior nodes back to L F mass via
    # d(slope) = (2 phi / (C sigma^2 p')) L F(dx) = (phi m / C) L F(dx)
    x = g.nodes
    mass = rises * fp.C / (fp.m_density.values[1:-1] * fp.phi.values[1:-1])
    pos = np.maximum(mass, 0.0)
    total = float(np.sum(pos))
    scale = float(np.max(np.abs(F.values))) or 1.0
    ok = total <= tol_rel * scale
    if pos.size and pos.max() > 0:
        i = int(np.argmax(pos))
        worst_drop = float(rises[i])
        worst_loc = float(x[i + 1])
        worst_mass = float(pos[i])
    else:
        worst_drop, worst_loc, worst_mass = 0.0, float(x[0]), 0.0
    return {"increasing_ok": bool(ok), "worst_drop": worst_drop,
            "worst_location": worst_loc, "violation_mass": total}


def check_excessive(prob, fp: FundamentalPair, F: GridFunction,
                    F_at_absorbing=(None, None),
                    tol_rel: float = MASS_TOL_REL) -> ExcessivityReport:
    """Decide excessivity of F >= 0 on the grid.

    measure_ok: the positive part of L F has total mass at most
    tol_rel * max|F| (atoms and density; smaller atoms are treated as
    slope-differencing noise).  boundary_ok: at each absorbing endpoint
    the declared endpoint value does not exceed the interior limit.
    """
    v = F.values
    scale = float(np.max(np.abs(v))) or 1.0
    if (v < -1e-12 * scale).any():
        i = int(np.argmin(v))
        raise NegativeCandidate(f"candidate is negative at x={fp.grid.nodes[i]}")

    finite = (np.isfinite(v).all() and np.isfinite(F.left_slopes).all()
              and np.isfinite(F.right_slopes).all())
    dc_ok = bool(finite)

    mu = apply_L(prob, fp, F)
    pos_density = np.maximum(mu.density, 0.0)
    x = fp.grid.nodes
    mass = float(np.trapz(pos_density, x))
    worst_loc, worst_mag = float(x[int(np.argmax(pos_density))]), float(pos_density.max())
    for loc, m in mu.atoms:
        if m > tol_rel * scale:
            mass += m
            if m > worst_mag:
                worst_loc, worst_mag = loc, m
    measure_ok = bool(mass <= tol_rel * scale)

    boundary_ok = True
    f_a, f_b = F_at_absorbing
    probe = max(3, len(x) // 100)
    if prob.absorbing_left():
        end_val = v[0] if f_a is None else float(f_a)
        interior = float(np.min(v[1:1 + probe]))
        boundary_ok = boundary_ok and end_val <= interior + tol_rel * scale
    if prob.absorbing_right():
        end_val = v[-1] if f_b is None else float(f_b)
        interior = float(np.min(v[-1 - probe:-1]))
        boundary_ok = boundary_ok and end_val <= interior + tol_rel * scale

    conc = transformed_concavity_check(fp, F, tol_rel)
    if conc["increasing_ok"] != measure_ok:
        warnings.warn(
            "excessivity routes disagree: measure route says "
            f"{measure_ok}, concavity route says {conc['increasing_ok']} "
            f"(positive mass {mass:.3e} vs {conc['violation_mass']:.3e})",
            RuntimeWarning)

    return ExcessivityReport(
        dc_ok=dc_ok,
        measure_ok=measure_ok,
        worst_violation=(worst_loc, worst_mag),
        boundary_ok=bool(boundary_ok),
        concave_test_ok=bool(conc["increasing_ok"]),
        verdict=bool(dc_ok and measure_ok and boundary_ok),
    )
