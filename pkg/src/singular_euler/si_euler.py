"""Scale-invariant (0-homogeneous) Euler dynamics on the sector.

The angular vorticity profile ``g(t, theta)`` is transported by
``g_t + 2 G g_theta = 0`` where ``G`` solves the two-point problem
``G'' + 4 G = -g`` (blow-up convention) or ``G'' + 4 G = g`` (physical
convention) with ``G(0) = G(pi/m) = 0``.

Lagrangian formulation
----------------------
Markers are labelled by their initial angle ``s`` and indexed by a uniform
computational coordinate ``sigma in [0, 1]`` with ``s = (pi/m) sigma^q``.
Each marker carries its position ``chi`` and the label Jacobian
``J = d chi / d s``; both obey closed ODEs (``chi' = 2 G(chi)``,
``J' = 2 G'(chi) J``).  Between markers ``chi/s`` is interpolated by cubic
Hermite polynomials in ``sigma``, which keeps every integral of the form
``int w(theta) g(theta) d theta`` smooth in ``sigma`` even though ``g``
behaves like ``theta^-alpha`` at the origin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

from .sector import (
    Convention,
    SectorConfig,
    default_grading,
    lp_loc_distance,
    lp_sphere_distance,
    quad_power_singular,
)

log = logging.getLogger(__name__)

__all__ = [
    "MarkerCollisionError",
    "LabelProfile",
    "power_profile",
    "MarkerField",
    "StreamSolution",
    "MonitorRecord",
    "BlowupReport",
    "init_markers",
    "solve_stream",
    "stream_half_angle_formula",
    "boundary_slopes",
    "step",
    "advance",
    "mass",
    "stream_integral",
    "monitors",
    "estimate_blowup_time",
    "blowup_fit",
    "run_blowup",
    "truncate_tail",
    "smooth_modify",
    "angular_profile",
    "state_at",
    "run_instability",
    "flow_separation_check",
    "green_kernel",
]


class MarkerCollisionError(RuntimeError):
    """Marker ordering broke during a step; the step size was too large."""

    def __init__(self, indices, time):
        self.indices = np.asarray(indices)
        self.time = time
        super().__init__(f"marker collision at t={time:.6g} between markers {self.indices[:8].tolist()}")


# --------------------------------------------------------------------------
# carried values


@dataclass(frozen=True)
class LabelProfile:
    """Carried vorticity as a function of the Lagrangian label ``s``.

    ``breakpoints`` are labels where ``func`` jumps; quadrature splits there.
    """

    func: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple = ()
    name: str = "custom"

    def __call__(self, s):
        return self.func(s)


def power_profile(alpha: float, sign: float = 1.0) -> LabelProfile:
    """``sign * s^-alpha``, the initial datum of the blow-up theorem."""
    if alpha == 0:
        return LabelProfile(lambda s: np.full(np.shape(s), sign), name="constant")
    return LabelProfile(lambda s: sign * np.asarray(s, dtype=float) ** -alpha, name=f"power({alpha:g})")


# --------------------------------------------------------------------------
# quadrature over marker cells


def _hermite_basis(t):
    t2, t3 = t * t, t * t * t
    h = np.stack([2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2])
    dh = np.stack([6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t])
    return h, dh


class _CellQuadrature:
    """Gauss points in every marker cell, split at label breakpoints.

    Everything that does not depend on time (labels, carried values, Hermite
    basis) is evaluated once and shared between steps.
    """

    def __init__(self, N: int, q: float, upper: float, profile: LabelProfile, nq: int = 4):
        self.N, self.q, self.upper = N, q, upper
        xg, wg = roots_legendre(nq)
        dsig = 1.0 / N
        sig_breaks = sorted({(b / upper) ** (1.0 / q) for b in profile.breakpoints if 0 < b < upper})
        cid, loc, wts = [], [], []
        base_t = 0.5 * (xg + 1.0)
        # regular cells
        cells = np.arange(N)
        split = set(int(min(math.floor(sb * N), N - 1)) for sb in sig_breaks)
        regular = np.array([c for c in cells if c not in split], dtype=int)
        cid.append(np.repeat(regular, nq))
        loc.append(np.tile(base_t, regular.size))
        wts.append(np.tile(0.5 * wg * dsig, regular.size))
        for c in sorted(split):
            cuts = [0.0] + [sb * N - c for sb in sig_breaks if c < sb * N < c + 1] + [1.0]
            for a, b in zip(cuts[:-1], cuts[1:]):
                cid.append(np.full(nq, c))
                loc.append(a + (b - a) * base_t)
                wts.append(0.5 * wg * (b - a) * dsig)
        self.cid = np.concatenate(cid)
        self.t = np.concatenate(loc)
        self.w = np.concatenate(wts)
        order = np.lexsort((self.t, self.cid))
        self.cid, self.t, self.w = self.cid[order], self.t[order], self.w[order]
        self.sigma = (self.cid + self.t) / N
        self.s = upper * self.sigma**q
        self.ds = q * upper * self.sigma ** (q - 1)
        self.h, self.dh = _hermite_basis(self.t)
        self.values = np.asarray(profile.func(self.s), dtype=float) * np.ones_like(self.s)

    def ratio_nodes(self, sigma, labels, chi, jac):
        """Nodal values and sigma-derivatives of ``R = chi / s``."""
        q = self.q
        R = np.empty_like(chi)
        dR = np.empty_like(chi)
        R[0] = jac[0]
        dR[0] = 0.0
        R[1:] = chi[1:] / labels[1:]
        dR[1:] = (jac[1:] - R[1:]) * q / sigma[1:]
        return R, dR

    def positions(self, sigma, labels, chi, jac):
        """Interpolated ``chi`` and ``d chi / d sigma`` at all Gauss points."""
        R, dR = self.ratio_nodes(sigma, labels, chi, jac)
        c = self.cid
        d = 1.0 / self.N
        h, dh = self.h, self.dh
        Rg = h[0] * R[c] + h[1] * d * dR[c] + h[2] * R[c + 1] + h[3] * d * dR[c + 1]
        dRg = (dh[0] * R[c] + dh[2] * R[c + 1]) / d + dh[1] * dR[c] + dh[3] * dR[c + 1]
        x = self.s * Rg
        dx = self.ds * Rg + self.s * dRg
        return x, dx

    def cell_sums(self, weights):
        return np.bincount(self.cid, weights=weights, minlength=self.N)


@dataclass(frozen=True, eq=False)
class MarkerField:
    """Lagrangian markers for the angular profile, endpoints included internally.

    ``chi``/``jac``/``labels`` have ``N+1`` entries, the first and last being
    the fixed points ``0`` and ``pi/m``.  The public views ``theta``,
    ``theta0`` and ``values`` cover the interior markers only.
    """

    sigma: np.ndarray
    labels: np.ndarray
    chi: np.ndarray
    jac: np.ndarray
    profile: LabelProfile
    q: float
    upper: float
    time: float = 0.0
    quad: _CellQuadrature | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.sigma.size - 1

    @property
    def theta(self) -> np.ndarray:
        return self.chi[1:-1]

    @property
    def theta0(self) -> np.ndarray:
        return self.labels[1:-1]

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.profile.func(self.labels[1:-1]), dtype=float) * np.ones(self.N - 1)

    def quadrature(self) -> _CellQuadrature:
        if self.quad is None:
            object.__setattr__(self, "quad", _CellQuadrature(self.N, self.q, self.upper, self.profile))
        return self.quad

    def with_state(self, chi, jac, time) -> "MarkerField":
        return replace(self, chi=chi, jac=jac, time=time)

    def with_profile(self, profile: LabelProfile) -> "MarkerField":
        return replace(self, profile=profile, quad=None)

    def position(self, s):
        """Current angle of arbitrary labels ``s`` (Hermite interpolation)."""
        s = np.asarray(s, dtype=float)
        sig = (np.clip(s, 0.0, self.upper) / self.upper) ** (1.0 / self.q)
        return _interp_chi(self, sig)[0]

    def label_of(self, theta):
        """Label whose marker currently sits at angle ``theta`` (inverse flow)."""
        return _invert(self, np.asarray(theta, dtype=float))


def init_markers(cfg: SectorConfig, N: int, profile: LabelProfile | None = None, q: float | None = None) -> MarkerField:
    """Markers at ``(pi/m) (j/N)^q`` carrying ``profile`` (default ``theta^-alpha``)."""
    if N < 8:
        raise ValueError(f"need at least 8 marker cells, got N={N}")
    if q is None:
        q = default_grading(cfg.alpha)
    L = cfg.half_width
    sigma = np.arange(N + 1) / N
    labels = L * sigma**q
    labels[-1] = L
    if profile is None:
        profile = power_profile(cfg.alpha)
    return MarkerField(sigma=sigma, labels=labels, chi=labels.copy(), jac=np.ones(N + 1), profile=profile, q=q, upper=L)


def _interp_chi(state: MarkerField, sig):
    """chi and d chi/d sigma at arbitrary sigma in [0, 1]."""
    qd = state.quadrature()
    R, dR = qd.ratio_nodes(state.sigma, state.labels, state.chi, state.jac)
    N = state.N
    c = np.clip(np.floor(sig * N).astype(int), 0, N - 1)
    t = sig * N - c
    h, dh = _hermite_basis(t)
    d = 1.0 / N
    Rg = h[0] * R[c] + h[1] * d * dR[c] + h[2] * R[c + 1] + h[3] * d * dR[c + 1]
    dRg = (dh[0] * R[c] + dh[2] * R[c + 1]) / d + dh[1] * dR[c] + dh[3] * dR[c + 1]
    s = state.upper * sig**state.q
    ds = state.q * state.upper * sig ** (state.q - 1)
    return s * Rg, ds * Rg + s * dRg


def _invert(state: MarkerField, theta):
    """Labels of the markers currently at ``theta`` (safeguarded Newton)."""
    theta = np.clip(theta, 0.0, state.upper)
    chi = state.chi
    N = state.N
    c = np.clip(np.searchsorted(chi, theta, side="right") - 1, 0, N - 1)
    lo = state.sigma[c].copy()
    hi = state.sigma[c + 1].copy()
    frac = (theta - chi[c]) / np.where(chi[c + 1] > chi[c], chi[c + 1] - chi[c], 1.0)
    sig = lo + (hi - lo) * np.clip(frac, 0.0, 1.0)
    for _ in range(60):
        x, dx = _interp_chi(state, sig)
        f = x - theta
        lo = np.where(f < 0, sig, lo)
        hi = np.where(f > 0, sig, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = sig - f / dx
        bad = ~np.isfinite(nxt) | (nxt <= lo) | (nxt >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        if np.all(np.abs(nxt - sig) <= 4e-16 * np.maximum(sig, 1e-300)):
            sig = nxt
            break
        sig = nxt
    return state.upper * sig**state.q


# --------------------------------------------------------------------------
# stream solve


@dataclass(frozen=True)
class StreamSolution:
    """Stream factor ``G`` sampled at ``theta`` (endpoints included) with its derivative."""

    theta: np.ndarray
    G: np.ndarray
    dG: np.ndarray
    slope0: float
    slopePi: float
    convention: Convention

    def __call__(self, x):
        """Piecewise cubic Hermite interpolant of ``G``."""
        x = np.asarray(x, dtype=float)
        th = self.theta
        c = np.clip(np.searchsorted(th, x, side="right") - 1, 0, th.size - 2)
        hcell = th[c + 1] - th[c]
        t = (x - th[c]) / hcell
        h, _ = _hermite_basis(t)
        return h[0] * self.G[c] + h[1] * hcell * self.dG[c] + h[2] * self.G[c + 1] + h[3] * hcell * self.dG[c + 1]


def green_kernel(theta, phi, cfg: SectorConfig):
    """Green's function of ``-(d^2 + 4)`` on ``(0, pi/m)`` with Dirichlet ends.

    ``K = sin(2 min) sin(2 (pi/m - max)) / (2 sin(2 pi/m))``; nonnegative for m >= 3.
    """
    L = cfg.half_width
    lo = np.minimum(theta, phi)
    hi = np.maximum(theta, phi)
    return np.sin(2 * lo) * np.sin(2 * (L - hi)) / (2 * math.sin(2 * L))


def _k1(x, L):
    # int_0^L K(theta, x) d theta, i.e. solution of -k'' - 4k = 1 with k(0)=k(L)=0
    return 0.25 * (np.cos(2 * x - L) / math.cos(L) - 1.0)


def _lagrangian_integrals(state: MarkerField, chi=None, jac=None):
    qd = state.quadrature()
    chi = state.chi if chi is None else chi
    jac = state.jac if jac is None else jac
    x, dx = qd.positions(state.sigma, state.labels, chi, jac)
    mu = qd.w * qd.values * dx
    return qd, x, mu


def _stream_at_markers(state: MarkerField, cfg: SectorConfig, chi=None, jac=None):
    chi = state.chi if chi is None else chi
    qd, x, mu = _lagrangian_integrals(state, chi, jac)
    L = state.upper
    cA = qd.cell_sums(mu * np.sin(2 * x))
    cB = qd.cell_sums(mu * np.sin(2 * (L - x)))
    A = np.concatenate([[0.0], np.cumsum(cA)])
    B = np.concatenate([np.cumsum(cB[::-1])[::-1], [0.0]])
    s2 = 2 * math.sin(2 * L)
    sgn = cfg.sign
    G = sgn * (np.sin(2 * (L - chi)) * A + np.sin(2 * chi) * B) / s2
    dG = sgn * (-2 * np.cos(2 * (L - chi)) * A + 2 * np.cos(2 * chi) * B) / s2
    G[0] = 0.0
    G[-1] = 0.0
    return G, dG


def _stream_from_callable(g, cfg: SectorConfig, theta=None, n: int = 16):
    L = cfg.half_width
    if theta is None:
        N = 256
        theta = L * (np.arange(N + 1) / N) ** default_grading(cfg.alpha)
    theta = np.asarray(theta, dtype=float)
    breaks = list(getattr(g, "breakpoints", ()) or ())
    edges = np.unique(np.concatenate([[0.0], theta, [L], breaks]))
    edges = edges[(edges >= 0) & (edges <= L)]

    def seg_integrals(w):
        out = np.empty(edges.size - 1)
        out[0] = quad_power_singular(lambda x: w(x) * g(x), min(cfg.alpha, 0.999), (edges[0], edges[1]), n=n)
        xl, wl = roots_legendre(n)
        lo, hi = edges[1:-1], edges[2:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        pts = mid[:, None] + half[:, None] * xl
        vals = (w(pts.ravel()) * g(pts.ravel())).reshape(pts.shape)
        out[1:] = half * (vals @ wl)
        return out

    cA = seg_integrals(lambda x: np.sin(2 * x))
    cB = seg_integrals(lambda x: np.sin(2 * (L - x)))
    A_e = np.concatenate([[0.0], np.cumsum(cA)])
    B_e = np.concatenate([np.cumsum(cB[::-1])[::-1], [0.0]])
    idx = np.searchsorted(edges, theta)
    A, B = A_e[idx], B_e[idx]
    s2 = 2 * math.sin(2 * L)
    sgn = cfg.sign
    G = sgn * (np.sin(2 * (L - theta)) * A + np.sin(2 * theta) * B) / s2
    dG = sgn * (-2 * np.cos(2 * (L - theta)) * A + 2 * np.cos(2 * theta) * B) / s2
    dG0 = sgn * 2 * B_e[0] / s2
    dGL = sgn * (-2 * A_e[-1]) / s2
    return theta, G, dG, dG0, dGL


def solve_stream(g, cfg: SectorConfig, theta=None) -> StreamSolution:
    """Invert the angular stream equation with the Green's kernel.

    ``g`` is a :class:`MarkerField` (Lagrangian quadrature over marker cells)
    or a callable profile of the angle, sampled at ``theta`` (default: a
    graded grid of 257 nodes including the endpoints).
    """
    if isinstance(g, MarkerField):
        if not np.all(np.isfinite(g.values)):
            raise ValueError("non-finite carried values")
        G, dG = _stream_at_markers(g, cfg)
        return StreamSolution(g.chi.copy(), G, dG, float(dG[0]), float(dG[-1]), cfg.convention)
    if not callable(g):
        raise TypeError("g must be a MarkerField or a callable profile")
    th, G, dG, s0, sL = _stream_from_callable(g, cfg, theta)
    if not (np.all(np.isfinite(G)) and np.isfinite(s0) and np.isfinite(sL)):
        raise ValueError("non-finite profile values")
    return StreamSolution(th, G, dG, float(s0), float(sL), cfg.convention)


def stream_half_angle_formula(g, cfg: SectorConfig, theta=None, n: int = 24) -> StreamSolution:
    """The half-angle representation with prefactor ``3m / (2 (m^2 - 4))``, as an alternative closed form.

    Kept for side-by-side comparison with :func:`solve_stream`; it only
    inverts ``G'' + 4G = -g`` when ``m = 4``.
    """
    if isinstance(g, MarkerField):
        g = angular_profile(g)
    m, L = cfg.m, cfg.half_width
    if theta is None:
        theta = L * (np.arange(257) / 256) ** default_grading(cfg.alpha)
    theta = np.asarray(theta, dtype=float)
    beta = min(cfg.alpha, 0.999)
    half = 0.5 * m

    def integ(w, a, b):
        if b <= a:
            return 0.0
        if a == 0.0:
            return quad_power_singular(lambda x: w(x) * g(x), beta, (a, b), n=n)
        return quad_power_singular(lambda x: w(x) * g(x), 0.0, (a, b), n=n, levels=2)

    sn = lambda x: np.sin(half * x)
    cs = lambda x: np.cos(half * x)
    Ain = np.array([integ(sn, 0.0, t) for t in theta])
    Bin = np.array([integ(cs, t, L) for t in theta])
    pref = 3 * m / (2 * (m * m - 4))
    G = pref * (np.cos(half * theta) * Ain + np.sin(half * theta) * Bin)
    dG = pref * half * (-np.sin(half * theta) * Ain + np.cos(half * theta) * Bin)
    return StreamSolution(theta, G, dG, float(dG[0]), float(dG[-1]), cfg.convention)


def boundary_slopes(S: StreamSolution, method: str = "fd") -> tuple[float, float]:
    """``(G'(0), G'(pi/m))``.

    ``method="fd"`` uses second-order one-sided differences on the sampled
    nodes; ``method="kernel"`` returns the slopes carried by the Green's
    representation.
    """
    if method == "kernel":
        return S.slope0, S.slopePi
    if method != "fd":
        raise ValueError(f"unknown slope method {method!r}")
    x, G = S.theta, S.G
    return _one_sided(x[:3], G[:3]), _one_sided(x[-3:][::-1], G[-3:][::-1])


def _one_sided(x, y):
    # derivative at x[0] of the quadratic through three (possibly uneven) nodes
    h1, h2 = x[1] - x[0], x[2] - x[0]
    return float(-(h1 + h2) / (h1 * h2) * y[0] + h2 / (h1 * (h2 - h1)) * y[1] - h1 / (h2 * (h2 - h1)) * y[2])


# --------------------------------------------------------------------------
# time stepping


def _rhs(state: MarkerField, chi, jac, cfg, stream):
    if stream is None:
        G, dG = _stream_at_markers(state, cfg, chi, jac)
    else:
        out = stream(chi)
        G, dG = out if isinstance(out, tuple) else (out, np.zeros_like(chi))
        G = np.broadcast_to(G, chi.shape)
        dG = np.broadcast_to(dG, chi.shape)
    return 2.0 * G, 2.0 * dG * jac


def step(state: MarkerField, dt: float, cfg: SectorConfig, stream=None) -> MarkerField:
    """One classical RK4 step of the characteristic flow ``chi' = 2 G(chi)``.

    ``stream`` optionally overrides the stream solve with a callable
    ``chi -> G`` (or ``chi -> (G, G')``); used to test the integrator.
    """
    if dt == 0:
        raise ValueError("dt must be nonzero")
    x0, j0 = state.chi, state.jac
    k1x, k1j = _rhs(state, x0, j0, cfg, stream)
    k2x, k2j = _rhs(state, x0 + 0.5 * dt * k1x, j0 + 0.5 * dt * k1j, cfg, stream)
    k3x, k3j = _rhs(state, x0 + 0.5 * dt * k2x, j0 + 0.5 * dt * k2j, cfg, stream)
    k4x, k4j = _rhs(state, x0 + dt * k3x, j0 + dt * k3j, cfg, stream)
    x = x0 + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    J = j0 + dt / 6.0 * (k1j + 2 * k2j + 2 * k3j + k4j)
    bad = np.nonzero(np.diff(x) <= 0)[0]
    if bad.size or not np.all(np.isfinite(x)) or np.any(J <= 0):
        idx = bad if bad.size else np.nonzero(~np.isfinite(x) | (J <= 0))[0]
        raise MarkerCollisionError(idx, state.time + dt)
    return state.with_state(x, J, state.time + dt)


def advance(state: MarkerField, t_end: float, cfg: SectorConfig, dt0: float) -> MarkerField:
    """Integrate to ``t_end`` (either direction) with the adaptive step policy."""
    I0 = _reference_mass(state, cfg)
    direction = 1.0 if t_end >= state.time else -1.0
    while direction * (t_end - state.time) > 1e-15 * max(1.0, abs(t_end)):
        dt = dt0 / (1.0 + abs(mass(state)) / I0)
        dt = min(dt, direction * (t_end - state.time))
        state = step(state, direction * dt, cfg)
    return replace(state, time=t_end) if state.time != t_end else state


def _reference_mass(state, cfg):
    return abs(mass(init_markers(cfg, state.N, state.profile, state.q))) or 1.0


# --------------------------------------------------------------------------
# diagnostics


def mass(state: MarkerField) -> float:
    """``int_0^{pi/m} g d theta`` via the label change of variables."""
    _, _, mu = _lagrangian_integrals(state)
    return float(np.sum(mu))


def stream_integral(state: MarkerField, cfg: SectorConfig) -> float:
    """``int_0^{pi/m} G d theta`` by integrating the kernel in the first slot."""
    _, x, mu = _lagrangian_integrals(state)
    return float(cfg.sign * np.sum(mu * _k1(x, state.upper)))


@dataclass
class MonitorRecord:
    t: float
    I: float
    dIdt: float
    identity_residual: float
    riccati_ratio: float
    ratio_drift_min: float
    corollary_gap_max: float
    slope_residual: float = float("nan")
    rate: float = float("nan")  # (G'(0) - G'(L)) (G'(0) + G'(L)) from the kernel slopes
    slope0: float = float("nan")
    slopePi: float = float("nan")
    pair_ratios: np.ndarray | None = field(default=None, repr=False)

    CSV_COLUMNS = ("t", "I", "dIdt", "identity_residual", "riccati_ratio", "ratio_drift_min", "corollary_gap_max")

    def row(self):
        return [getattr(self, c) for c in self.CSV_COLUMNS]


def sample_pairs(N: int, count: int = 32):
    """Marker index pairs ``(i, j)``, ``i < j``, from log-spaced interior indices."""
    idx = np.unique(np.round(np.geomspace(1, N - 1, count + 1)).astype(int))
    k = np.arange(idx.size - 1)
    return idx[k], idx[k + 1]


def all_pairs(N: int):
    i, j = np.triu_indices(N - 1, k=1)
    return i + 1, j + 1


def monitors(state: MarkerField, prev: MonitorRecord | None, cfg: SectorConfig, pairs=None) -> MonitorRecord:
    """Diagnostics of the blow-up mechanism at the current state.

    Mass-evolution residual: compares the midpoint difference quotient of the
    mass since ``prev`` with the trapezoidal average of the boundary-slope
    product.  Slope residual: one-sided FD slopes against ``I + 4 int G``.
    """
    if pairs is None:
        pairs = sample_pairs(state.N)
    S = solve_stream(state, cfg)
    I = mass(state)
    intG = stream_integral(state, cfg)
    k0, kL = S.slope0, S.slopePi
    rate = cfg.sign * (k0 - kL) * (k0 + kL)
    f0, fL = boundary_slopes(S, "fd")
    target = cfg.sign * I + 4 * intG
    scale = max(abs(I), 1e-300)
    slope_res = abs((f0 - fL) - target) / scale

    i, j = pairs
    ratios = state.chi[i] / state.chi[j]
    with np.errstate(divide="ignore"):
        vals = np.asarray(state.profile.func(state.labels), dtype=float) * np.ones(state.N + 1)
    if np.all(vals[1:-1] > 0):
        gap = vals[j] / vals[i] - (state.chi[j] / state.chi[i]) ** (-cfg.alpha)
        gap_max = float(np.max(gap))
    else:
        gap_max = float("nan")

    if prev is None or prev.t == state.time:
        dIdt, resid, drift = rate, float("nan"), 0.0
    else:
        dt = state.time - prev.t
        dIdt = (I - prev.I) / dt
        avg = 0.5 * (rate + prev.rate)
        resid = abs(dIdt - avg) / max(abs(avg), 1e-300)
        drift = float(np.min((ratios - prev.pair_ratios) * math.copysign(1.0, dt))) if prev.pair_ratios is not None else 0.0
    return MonitorRecord(
        t=state.time,
        I=I,
        dIdt=dIdt,
        identity_residual=resid,
        riccati_ratio=rate / (I * I) if I else float("nan"),
        ratio_drift_min=drift,
        corollary_gap_max=gap_max,
        slope_residual=slope_res,
        rate=rate,
        slope0=k0,
        slopePi=kL,
        pair_ratios=ratios,
    )


def blowup_fit(series: Sequence[tuple[float, float]]):
    """Least-squares line through ``1/I`` on the last third of ``series``.

    Returns ``(T_star, slope, r_squared)`` where ``T_star`` is the root of the line.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 5:
        raise ValueError("need at least 5 (t, I) samples")
    t, I = arr[:, 0], arr[:, 1]
    if np.any(np.diff(I) <= 0):
        raise ValueError("mass series is not increasing")
    k = arr.shape[0] - max(arr.shape[0] // 3, 3)
    tt, y = t[k:], 1.0 / I[k:]
    slope, icpt = np.polyfit(tt, y, 1)
    pred = slope * tt + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -icpt / slope, slope, r2


def estimate_blowup_time(series: Sequence[tuple[float, float]]) -> float:
    """Root of the linear fit of ``1/I`` (Riccati mechanism) on the last third."""
    return float(blowup_fit(series)[0])


@dataclass
class BlowupReport:
    records: list
    T_star: float
    r_squared: float
    c_min: float
    final: MarkerField
    history: list
    stop_reason: str
    dt0: float
    N: int
    verdicts: dict = field(default_factory=dict)

    def series(self):
        return [(r.t, r.I) for r in self.records]


def run_blowup(
    cfg: SectorConfig,
    N: int = 2048,
    dt0: float = 2e-3,
    growth: float = 50.0,
    max_steps: int = 200_000,
    history_stride: int = 10,
    pairs=None,
    profile: LabelProfile | None = None,
) -> BlowupReport:
    """Evolve ``g0 = theta^-alpha`` until the mass has grown by ``growth``.

    Steps follow ``dt = dt0 / (1 + I/I0)``; a marker collision also ends the
    run.  Every step is monitored; every ``history_stride``-th state is kept.
    """
    state = init_markers(cfg, N, profile)
    pairs = sample_pairs(N) if pairs is None else pairs
    rec = monitors(state, None, cfg, pairs)
    I0 = rec.I
    records, history = [rec], [state]
    reason = "max_steps"
    for k in range(1, max_steps + 1):
        dt = dt0 / (1.0 + rec.I / I0)
        try:
            state = step(state, dt, cfg)
        except MarkerCollisionError as exc:
            log.warning("%s", exc)
            reason = "collision"
            break
        rec = monitors(state, rec, cfg, pairs)
        records.append(rec)
        if k % history_stride == 0:
            history.append(state)
        if rec.I >= growth * I0:
            reason = "growth"
            break
    if history[-1] is not state:
        history.append(state)
    try:
        T, _, r2 = blowup_fit([(r.t, r.I) for r in records])
    except ValueError as exc:
        # too short or non-monotone series: no blow-up estimate
        log.warning("no blow-up fit: %s", exc)
        T, r2 = math.nan, math.nan
    c_min = float(min(r.riccati_ratio for r in records))
    rep = BlowupReport(records, float(T), float(r2), c_min, state, history, reason, dt0, N)
    rep.verdicts = blowup_verdicts(rep)
    return rep


def blowup_verdicts(rep: BlowupReport, tol_identity: float = 1e-4) -> dict:
    rs = rep.records
    ident = np.array([r.identity_residual for r in rs[1:]])
    slope = np.array([r.slope_residual for r in rs])
    return {
        "mass_identity": bool(np.nanmax(ident) <= tol_identity) if ident.size else True,
        "slope_identity": bool(np.nanmax(slope) <= tol_identity),
        "riccati_positive": rep.c_min > 0,
        "ratio_monotone": bool(min(r.ratio_drift_min for r in rs) >= -1e-10),
        "corollary_bound": bool(np.nanmax([r.corollary_gap_max for r in rs]) <= 1e-8),
        "linear_inverse_mass": rep.r_squared >= 0.999,
        "finite_blowup": bool(np.isfinite(rep.T_star) and rep.T_star > rs[-1].t),
    }


# --------------------------------------------------------------------------
# perturbations


def angular_profile(state: MarkerField):
    """Eulerian view ``theta -> g(theta)`` of a marker field (with jump locations)."""

    def g(theta):
        theta = np.asarray(theta, dtype=float)
        s = state.label_of(theta.ravel()).reshape(theta.shape)
        return np.asarray(state.profile.func(s), dtype=float) * np.ones(theta.shape)

    g.breakpoints = tuple(float(state.position(b)) for b in state.profile.breakpoints)
    return g


def truncate_tail(state: MarkerField, eps: float) -> MarkerField:
    """Zero the carried values on ``theta >= pi/m - eps`` (the jump is kept)."""
    L = state.upper
    if not (0.0 <= eps < 0.5 * L):
        raise ValueError(f"eps must lie in [0, pi/(2m)), got {eps}")
    if eps == 0:
        return state
    cut = float(state.label_of(np.array([L - eps]))[0])
    base = state.profile
    func = lambda s, f=base.func: np.where(np.asarray(s) < cut, f(s), 0.0)
    prof = LabelProfile(func, tuple(sorted(set(base.breakpoints) | {cut})), name=f"{base.name}|tail({eps:g})")
    return state.with_profile(prof)


def _blend(x, x0, x1, y0, y1, d0, d1):
    # cubic Hermite on [x0, x1]
    h = x1 - x0
    t = np.clip((x - x0) / h, 0.0, 1.0)
    b, _ = _hermite_basis(t)
    return b[0] * y0 + b[1] * h * d0 + b[2] * y1 + b[3] * h * d1


def smooth_modify(state: MarkerField, eps: float, mode: str, cfg: SectorConfig) -> MarkerField:
    """Smoothed perturbations of a monotone profile at the current time.

    ``plateau``: cap the singular head at ``eps^-alpha`` and rejoin the
    profile over an angular interval of width ``eps`` with a C^1 monotone
    cubic.  ``tail``: additionally send the profile to 0 across
    ``[pi/m - 2 eps, pi/m - eps]``.
    """
    L = state.upper
    if not (0.0 < eps < 0.5 * L):
        raise ValueError(f"eps must lie in (0, pi/(2m)), got {eps}")
    if mode not in ("plateau", "tail"):
        raise ValueError(f"unknown mode {mode!r}")
    v = state.values
    dv = np.diff(v)
    decreasing = np.all(dv <= 0)
    if not (decreasing or np.all(dv >= 0)):
        raise ValueError("smooth_modify needs a monotone profile")
    base = state.profile.func
    g_theta = angular_profile(state)
    sgn = 1.0 if np.nanmax(np.abs(v)) == np.nanmax(v) else -1.0
    cap = sgn * eps ** (-cfg.alpha) if cfg.alpha > 0 else sgn * np.inf

    # head: first angle where |g| falls to the cap
    absv = np.abs(v)
    if not np.isfinite(cap) or absv.max() <= abs(cap):
        head = None
    else:
        k = int(np.nonzero(absv <= abs(cap))[0][0]) if np.any(absv <= abs(cap)) else v.size - 1
        lo_s, hi_s = (state.labels[k], state.labels[k + 1])
        for _ in range(80):
            mid = 0.5 * (lo_s + hi_s)
            if abs(base(np.array([mid]))[0]) > abs(cap):
                lo_s = mid
            else:
                hi_s = mid
        th0 = float(state.position(hi_s))
        th1 = min(th0 + eps, L - 2 * eps) if mode == "tail" else min(th0 + eps, L)
        y1 = float(g_theta(np.array([th1]))[0])
        hd = 1e-7 * max(th1, 1e-12)
        d1 = float((g_theta(np.array([th1 + hd]))[0] - g_theta(np.array([th1 - hd]))[0]) / (2 * hd))
        # keep the joint monotone: clip the end slope to the secant bound
        sec = (y1 - cap) / (th1 - th0)
        d1 = d1 if d1 * sec >= 0 and abs(d1) <= 3 * abs(sec) else sec
        head = (th0, th1, cap, y1, 0.0, d1)

    tail = None
    if mode == "tail":
        a, b = L - 2 * eps, L - eps
        ya = float(g_theta(np.array([a]))[0])
        hd = 1e-7
        da = float((g_theta(np.array([a + hd]))[0] - g_theta(np.array([a - hd]))[0]) / (2 * hd))
        sec = (0.0 - ya) / (b - a)
        da = da if da * sec >= 0 and abs(da) <= 3 * abs(sec) else sec
        tail = (a, b, ya, 0.0, da, 0.0)

    def func(s, st=state):
        s = np.asarray(s, dtype=float)
        out = np.asarray(base(s), dtype=float) * np.ones(s.shape)
        th = st.position(s)
        if head is not None:
            x0, x1, y0, y1, d0, d1 = head
            out = np.where(th <= x0, y0, out)
            sel = (th > x0) & (th < x1)
            out = np.where(sel, _blend(th, x0, x1, y0, y1, d0, d1), out)
        if tail is not None:
            a, b, ya, yb, da, db = tail
            sel = (th > a) & (th < b)
            out = np.where(sel, _blend(th, a, b, ya, yb, da, db), out)
            out = np.where(th >= b, 0.0, out)
        return out

    # freeze the current positions used to define the profile
    frozen = replace(state)
    prof = LabelProfile(lambda s, f=func, st=frozen: f(s, st), state.profile.breakpoints, name=f"{state.profile.name}|{mode}({eps:g})")
    return state.with_profile(prof)


# --------------------------------------------------------------------------
# instability and separation


def state_at(history: Sequence[MarkerField], t: float, cfg: SectorConfig, dt0: float) -> MarkerField:
    """State at time ``t`` by restarting from the latest stored snapshot before it."""
    times = np.array([h.time for h in history])
    if t > times.max() + 1e-14 or t < times.min() - 1e-14:
        raise ValueError(f"requested time {t} outside history [{times.min()}, {times.max()}]")
    k = int(np.searchsorted(times, t, side="right") - 1)
    k = max(k, 0)
    return advance(history[k], t, cfg, dt0)


@dataclass
class InstabilityCase:
    eps: float
    d_final_sphere: float
    d_final_loc: float
    d0_sphere: float
    d0_loc: float
    reversibility: float


def run_instability(cfg: SectorConfig, p: float, eps_list, T_star: float, history=None, N: int = 1024, dt0: float = 2e-3, balls: int = 40):
    """Truncated-tail perturbations near the blow-up time, pulled back to t = 0.

    For each ``eps``: evolve to ``T* - eps``, zero the tail
    ``theta >= pi/m - eps``, evolve both fields back to ``t = 0`` and report
    the L^p(S^1) and L^p_loc distances at both ends.
    """
    if cfg.alpha > 0 and p >= 1.0 / cfg.alpha:
        raise ValueError(f"instability needs p < 1/alpha, got p={p}")
    out = []
    for eps in eps_list:
        if not (0.0 <= eps < T_star):
            raise ValueError(f"eps={eps} must lie in [0, T*)")
        t1 = T_star - eps
        if history is not None:
            top = state_at(history, t1, cfg, dt0)
        else:
            top = advance(init_markers(cfg, N), t1, cfg, dt0)
        pert = truncate_tail(top, eps)
        g_top, p_top = angular_profile(top), angular_profile(pert)
        d1 = lp_sphere_distance(g_top, p_top, p, cfg)
        d1_loc = lp_loc_distance(g_top, p_top, p, cfg, balls=balls)
        back = advance(top, 0.0, cfg, dt0)
        pback = advance(pert, 0.0, cfg, dt0)
        g0, pg0 = angular_profile(back), angular_profile(pback)
        d0 = lp_sphere_distance(g0, pg0, p, cfg)
        d0_loc = lp_loc_distance(g0, pg0, p, cfg, balls=balls)
        rev = float(np.max(np.abs(back.chi - back.labels)))
        out.append(InstabilityCase(float(eps), d1, d1_loc, d0, d0_loc, rev))
    return out


@dataclass
class SeparationReport:
    eps: np.ndarray
    forward: np.ndarray  # chi(eps, T* - eps)
    preimage: np.ndarray  # chi^-1(pi/m - eps, T* - eps)
    inf_forward: float
    sup_preimage: float
    c: float


def flow_separation_check(history, eps_list, T_star: float, cfg: SectorConfig, dt0: float) -> SeparationReport:
    """Forward image of the angle ``eps`` and preimage of ``pi/m - eps`` at ``T* - eps``."""
    L = cfg.half_width
    fw, pre = [], []
    for eps in eps_list:
        st = state_at(history, T_star - eps, cfg, dt0)
        fw.append(float(st.position(np.array([eps]))[0]) if eps > 0 else 0.0)
        pre.append(float(st.label_of(np.array([L - eps]))[0]))
    fw, pre = np.array(fw), np.array(pre)
    c = float(min(fw.min(), L - pre.max()))
    return SeparationReport(np.asarray(eps_list, float), fw, pre, float(fw.min()), float(pre.max()), c)
