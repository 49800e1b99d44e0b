"""The measure-valued operator L, r-potentials and the Green kernel.

L g = (1/2) sigma^2 g'' + b g'_- - r g, read in the distributional
sense: slope jumps at nodes carry atoms (1/2) sigma^2 (g'_+ - g'_-),
the rest is a density.  The potential of a measure mu is

    R(x) = (2/C) phi(x) int_(alpha,x) psi/(sigma^2 p') dmu
         + (2/C) psi(x) int_[x,beta)  phi/(sigma^2 p') dmu

with the half-open split placing an atom at x itself on the psi branch.
Both cumulative integrals are prefix sums, so a потential costs O(n),
and slopes come from differentiating the closed form, not from
differencing values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang
from .errors import (
    AbsorbingValueMissing,
    IntegrabilityFailure,
    OutOfSpan,
    UnboundedRatio,
)
from .odecore import FundamentalPair, GridFunction

ATOM_NOISE_REL = 1e-9       # slope jumps below this (times the value scale) are noise
RESIDUAL_RAISE = 1e-4       # boundary ratio above this means the tail integral diverges


@dataclass
class SignedMeasure:
    """Radon measure on the working span: piecewise-linear density plus
    finitely many atoms sitting on grid nodes."""

    grid: object
    density: np.ndarray                 # node values of the density
    atoms: list = field(default_factory=list)   # [(location, mass)]

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        snapped = []
        for loc, mass in self.atoms:
            i = self.grid.index_of(loc)
            if i is None:
                raise ValueError(f"atom at {loc} is not on a grid node")
            snapped.append((float(self.grid.nodes[i]), float(mass)))
        self.atoms = snapped

    def scaled(self, a):
        return SignedMeasure(self.grid, a * self.density,
                             [(x, a * m) for x, m in self.atoms])

    def plus(self, other):
        merged = {}
        for x, m in self.atoms + other.atoms:
            merged[x] = merged.get(x, 0.0) + m
        return SignedMeasure(self.grid, self.density + other.density,
                             sorted(merged.items()))

    def atom_at(self, x, tol=1e-12):
        for loc, mass in self.atoms:
            if abs(loc - x) <= tol * max(1.0, abs(x)):
                return mass
        return 0.0

    def positive_mass(self):
        """Total mass of the positive part: positive atoms plus the
        integral of the positive density part (trapezoid)."""
        x = self.grid.nodes
        pos = np.maximum(self.density, 0.0)
        total = float(np.trapz(pos, x))
        total += sum(m for _, m in self.atoms if m > 0)
        return total

    def total_variation(self):
        x = self.grid.nodes
        tv = float(np.trapz(np.abs(self.density), x))
        tv += sum(abs(m) for _, m in self.atoms)
        return tv


@dataclass
class Potential:
    """R_mu on the grid, with the boundary ratio residuals |R|/phi at the
    left truncation and |R|/psi at the right (both vanish for a genuine
    potential)."""

    R: GridFunction
    left_ratio_residual: float
    right_ratio_residual: float

    def __call__(self, x):
        return self.R.interp(x)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("x,R\r\n")
            for x, v in zip(self.R.grid.nodes, self.R.values):
                fh.write(f"{x!r},{v!r}\r\n")


# --- the operator L ------------------------------------------------------

def apply_L(prob, fp: FundamentalPair, F: GridFunction) -> SignedMeasure:
    """Distributional L F as a measure: cellwise second derivatives from
    slope differences give the density, slope jumps at nodes give atoms."""
    g = fp.grid
    x = g.nodes
    h = g.h
    v = F.values
    d2_cell = (F.left_slopes[1:] - F.right_slopes[:-1]) / h

    # interpolate the cell-midpoint second derivatives back to nodes;
    # the edge nodes extrapolate linearly from the two nearest midpoints
    d2 = np.empty_like(v)
    w = h[1:] / (h[:-1] + h[1:])
    d2[1:-1] = w * d2_cell[:-1] + (1.0 - w) * d2_cell[1:]
    d2[0] = d2_cell[0] - h[0] * (d2_cell[1] - d2_cell[0]) / (h[0] + h[1])
    d2[-1] = d2_cell[-1] + h[-1] * (d2_cell[-1] - d2_cell[-2]) / (h[-1] + h[-2])

    s2 = prob.sigma2(x)
    bv = exprlang.evaluate(prob.b, x)
    rv = exprlang.evaluate(prob.r, x)
    density = 0.5 * s2 * d2 + bv * F.left_slopes - rv * v

    scale = float(np.max(np.abs(v))) or 1.0
    jumps = F.right_slopes - F.left_slopes
    atoms = []
    for i in np.nonzero(np.abs(jumps) > ATOM_NOISE_REL * scale)[0]:
        atoms.append((float(x[i]), float(0.5 * s2[i] * jumps[i])))
    return SignedMeasure(g, density, atoms)


# --- potentials -----------------------------------------------------------

def _prefix_integrals(fp, mu):
    """Cumulative speed-weighted integrals of psi and phi against mu.

    Returns (A_lo, A_hi, B_lo, B_hi) where A_lo[i] integrates
    psi/(sigma^2 p') over ]alpha, x_i[ (atom at x_i excluded) and
    A_hi[i] over ]alpha, x_i] (atom included); B_* are the mirrored
    phi-integrals over [x_i, beta[ / ]x_i, beta[.
    """
    g = fp.grid
    x = g.nodes
    h = g.h
    w = fp.m_density.values * 0.5          # 1/(sigma^2 p')
    psi_w = fp.psi.values * w * mu.density
    phi_w = fp.phi.values * w * mu.density

    cell_psi = 0.5 * (psi_w[1:] + psi_w[:-1]) * h
    cell_phi = 0.5 * (phi_w[1:] + phi_w[:-1]) * h

    atom_psi = np.zeros_like(x)
    atom_phi = np.zeros_like(x)
    for loc, mass in mu.atoms:
        i = g.index_of(loc)
        ww = mass * 0.5 * fp.m_density.values[i]
        atom_psi[i] = fp.psi.values[i] * ww
        atom_phi[i] = fp.phi.values[i] * ww

    a_lo = np.concatenate([[0.0], np.cumsum(cell_psi)]) + np.concatenate(
        [[0.0], np.cumsum(atom_psi[:-1])])
    a_hi = a_lo + atom_psi
    b_hi = np.concatenate([np.cumsum(cell_phi[::-1])[::-1], [0.0]]) + np.concatenate(
        [np.cumsum(atom_phi[1:][::-1])[::-1], [0.0]])
    b_lo = b_hi + atom_phi
    return a_lo, a_hi, b_lo, b_hi


def potential(prob, fp: FundamentalPair, mu: SignedMeasure,
              check_residuals: bool = True) -> Potential:
    """r-potential of mu; satisfies L R = -mu up to discretization.

    Raises IntegrabilityFailure when the boundary ratios |R|/phi (left)
    or |R|/psi (right) fail to vanish at the truncation, which is the
    truncated-span signature of a divergent tail integral.
    """
    g = fp.grid
    a_lo, a_hi, b_lo, b_hi = _prefix_integrals(fp, mu)
    phi_v, psi_v = fp.phi.values, fp.psi.values
    phi_d, psi_d = fp.phi.right_slopes, fp.psi.right_slopes
    k = 2.0 / fp.C

    values = k * (phi_v * a_lo + psi_v * b_lo)
    left = k * (phi_d * a_lo + psi_d * b_lo)
    right = k * (phi_d * a_hi + psi_d * b_hi)

    # Boundary ratios R/phi and R/psi must vanish at the truncation for a
    # genuine potential; normalize by their own maxima so the test is
    # scale-invariant and a divergent tail (which inflates the ratio near
    # the boundary as the span grows) is caught.  psi vanishes at an
    # absorbing left endpoint (symmetrically phi), where the ratio is 0
    # by construction.
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_l = np.where(phi_v > 0, np.abs(values) / phi_v, 0.0)
        ratio_r = np.where(psi_v > 0, np.abs(values) / psi_v, 0.0)
    lmax = float(np.max(ratio_l)) or 1.0
    rmax = float(np.max(ratio_r)) or 1.0
    lres = float(ratio_l[0]) / lmax
    rres = float(ratio_r[-1]) / rmax
    if check_residuals and max(lres, rres) > RESIDUAL_RAISE:
        raise IntegrabilityFailure(
            f"potential does not vanish against phi/psi at the truncation "
            f"(residuals {lres:.2e}, {rres:.2e}); the defining integral "
            f"diverges under truncation growth")
    R = GridFunction(g, values, left, right)
    return Potential(R=R, left_ratio_residual=float(lres),
                     right_ratio_residual=float(rres))


def potential_ac(prob, fp: FundamentalPair, h, check_residuals=True) -> Potential:
    """Potential of the absolutely continuous measure h(x) dx."""
    if isinstance(h, str):
        h = exprlang.parse(h, getattr(prob, "constants", None))
    if isinstance(h, exprlang.Expr):
        hv = exprlang.evaluate(h, fp.grid.nodes)
    else:
        hv = np.asarray(h, dtype=float)
    mu = SignedMeasure(fp.grid, hv, [])
    return potential(prob, fp, mu, check_residuals=check_residuals)


def potential_tilde(prob, fp: FundamentalPair, h) -> Potential:
    """Potential of h dx extended past absorption: absorbing endpoints
    keep paying h(endpoint) forever, adding (h/r)(endpoint) times the
    hitting transform of that endpoint."""
    if isinstance(h, str):
        h = exprlang.parse(h, getattr(prob, "constants", None))
    base = potential_ac(prob, fp, h)
    g = fp.grid
    values = base.R.values.copy()
    left = base.R.left_slopes.copy()
    right = base.R.right_slopes.copy()
    if prob.absorbing_left():
        try:
            h_a = float(exprlang.evaluate(h, prob.alpha))
            r_a = float(exprlang.evaluate(prob.r, prob.alpha))
        except Exception as exc:
            raise AbsorbingValueMissing(
                f"h or r undefined at the absorbing endpoint {prob.alpha}") from exc
        phi_a = fp.phi.values[0]
        coef = h_a / r_a / phi_a
        values += coef * fp.phi.values
        left += coef * fp.phi.right_slopes
        right += coef * fp.phi.right_slopes
    if prob.absorbing_right():
        try:
            h_b = float(exprlang.evaluate(h, prob.beta))
            r_b = float(exprlang.evaluate(prob.r, prob.beta))
        except Exception as exc:
            raise AbsorbingValueMissing(
                f"h or r undefined at the absorbing endpoint {prob.beta}") from exc
        psi_b = fp.psi.values[-1]
        coef = h_b / r_b / psi_b
        values += coef * fp.psi.values
        left += coef * fp.psi.right_slopes
        right += coef * fp.psi.right_slopes
    R = GridFunction(g, values, left, right)
    return Potential(R=R, left_ratio_residual=base.left_ratio_residual,
                     right_ratio_residual=base.right_ratio_residual)


def greens_kernel(prob, fp: FundamentalPair, x, s) -> float:
    """Resolvent density u(x, s) = (2 / (C sigma^2(s) p'(s)))
    * phi(max(x,s)) * psi(min(x,s)); the potential of a unit atom at s."""
    lo, hi = fp.grid.left_trunc, fp.grid.right_trunc
    if not (lo <= x <= hi and lo <= s <= hi):
        raise OutOfSpan(f"kernel point ({x}, {s}) outside [{lo}, {hi}]")
    m_s = fp.m_density.interp(s)      # 2/(sigma^2 p') at s
    return float((m_s / fp.C) * fp.phi_at(max(x, s)) * fp.psi_at(min(x, s)))


def represent(prob, fp: FundamentalPair, F: GridFunction):
    """Split F into A*phi + R + B*psi with R the potential of -L F.

    A and B are the ratios F/phi and F/psi read at the truncation nodes,
    where the tails of psi/phi and phi/psi are below tolerance.
    """
    g = fp.grid
    phi_v, psi_v = fp.phi.values, fp.psi.values
    ratio_l = F.values / phi_v
    ratio_r = F.values / psi_v
    k = max(3, len(g) // 20)
    if abs(ratio_l[0]) > 1e6 * (abs(ratio_l[k]) + 1e-300):
        raise UnboundedRatio("F/phi blows up toward the left truncation")
    if abs(ratio_r[-1]) > 1e6 * (abs(ratio_r[-k]) + 1e-300):
        raise UnboundedRatio("F/psi blows up toward the right truncation")
    A = float(ratio_l[0])
    B = float(ratio_r[-1])
    mu = apply_L(prob, fp, F).scaled(-1.0)
    R = potential(prob, fp, mu, check_residuals=False)
    recon = A * phi_v + R.R.values + B * psi_v
    residual = float(np.max(np.abs(F.values - recon)))
    return {"A": A, "B": B, "R": R, "residual": residual}
