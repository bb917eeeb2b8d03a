"""Analytic norms with singular weights and the majorant flow that propagates them.

For a vorticity ``omega(r, theta)`` on the sector the norm is generated by

    f_k = || (r + theta)^(k + alpha) d_r^k omega ||_inf
    g_k = || (r + theta)^(k + alpha) d_theta^k omega ||_inf
    E   = sum_k lam^k / k! (f_k + g_k),      E~ = sum_k k lam^k / k! (f_k + g_k).

Derivatives come from exact oracles: high-order finite differences of
singular profiles are useless.  The suprema are grid suprema, i.e. lower
bounds of the true ``L^inf`` norms, flagged for refinement stability.

The majorant flow replaces the differential inequalities for ``f_k, g_k``
by equalities.  Its solution dominates the norms of any true solution
with the same data, so properties proved for it (``E`` non-increasing when
``lam`` shrinks fast enough; linear decay of ``lam``) transfer to the
Euler flow.  The constants of the inequalities are not known explicitly;
``C`` (recursion) and ``C_lambda`` (decay rate of ``lam``) are parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaln, poch

from .sector import SectorConfig

__all__ = [
    "DerivativeOracle",
    "WeightedSups",
    "NormReport",
    "MajorantState",
    "MajorantTrajectory",
    "BoundVerdict",
    "power_law_oracle",
    "zero_oracle",
    "sine_mode_oracle",
    "product_oracle",
    "default_grid",
    "weighted_sups",
    "series_norm",
    "power_law_majorant",
    "majorant_rhs",
    "integrate_majorant",
    "majorant_bound_check",
    "DEFAULT_C",
    "DEFAULT_C_LAMBDA",
]

DEFAULT_C = 1.0
DEFAULT_C_LAMBDA = 2.0
DEFAULT_K_MAX = 40

Deriv = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DerivativeOracle:
    """Exact derivatives ``d_r^k omega`` and ``d_theta^k omega``.

    ``scaled`` optionally returns the weighted quantities
    ``(r+theta)^(k+alpha) d^k omega`` for ``kind in {"r", "theta"}`` directly;
    it is used only when the unweighted derivative overflows.
    """

    name: str
    alpha: float
    dr: Deriv
    dth: Deriv
    K_max: int = DEFAULT_K_MAX
    scaled: Callable[[str, int, np.ndarray, np.ndarray], np.ndarray] | None = None
    zero: bool = False

    def derivative(self, kind: str, k: int, r, theta):
        if k > self.K_max:
            raise ValueError(f"derivative order k={k} exceeds K_max={self.K_max} of oracle {self.name!r}")
        fn = self.dr if kind == "r" else self.dth
        return np.asarray(fn(k, r, theta), dtype=float)


def _pochhammer(alpha: float, k: int) -> float:
    return float(poch(alpha, k)) if alpha > 0 else float(k == 0)


def power_law_oracle(alpha: float, K_max: int = 160) -> DerivativeOracle:
    """``omega = (r + theta)^-alpha``; every derivative is ``(-1)^k (alpha)_k (r+theta)^(-alpha-k)``."""

    def d(k, r, th):
        return (-1.0) ** k * _pochhammer(alpha, k) * (r + th) ** (-alpha - k)

    def scaled(kind, k, r, th):
        # log-domain: ln (alpha)_k - (alpha+k) ln x + (k+alpha) ln x
        x = np.asarray(r + th, dtype=float)
        if alpha == 0:
            return np.full(x.shape, float(k == 0))
        lg = gammaln(alpha + k) - gammaln(alpha)
        return (-1.0) ** k * np.exp(lg - (alpha + k) * np.log(x) + (k + alpha) * np.log(x))

    return DerivativeOracle(f"power({alpha:g})", alpha, d, d, K_max, scaled)


def zero_oracle(alpha: float = 0.0, K_max: int = DEFAULT_K_MAX) -> DerivativeOracle:
    z = lambda k, r, th: np.zeros(np.broadcast(r, th).shape)
    return DerivativeOracle("zero", alpha, z, z, K_max, zero=True)


def sine_mode_oracle(cfg: SectorConfig, k_mode: int, radial, alpha: float | None = None, K_max: int = DEFAULT_K_MAX) -> DerivativeOracle:
    """``omega = h(r) sin(m k theta)`` with ``h`` a radial profile carrying a derivative oracle."""
    n = cfg.m * k_mode

    def dr(k, r, th):
        return radial.deriv(k, r) * np.sin(n * th)

    def dth(k, r, th):
        return radial(r) * n**k * np.sin(n * th + 0.5 * k * math.pi)

    a = cfg.alpha if alpha is None else alpha
    return DerivativeOracle(f"mode{k_mode}*{radial.name}", a, dr, dth, K_max)


def product_oracle(a: DerivativeOracle, b: DerivativeOracle) -> DerivativeOracle:
    """Leibniz rule for ``omega = a * b``; the envelope exponent is taken from ``a``."""

    def leib(kind):
        def d(k, r, th):
            return sum(math.comb(k, i) * a.derivative(kind, i, r, th) * b.derivative(kind, k - i, r, th) for i in range(k + 1))

        return d

    return DerivativeOracle(f"{a.name}*{b.name}", a.alpha, leib("r"), leib("theta"), min(a.K_max, b.K_max), zero=a.zero or b.zero)


def default_grid(cfg: SectorConfig, nr: int = 61, nth: int = 31, r_range=(1e-3, 10.0)):
    """Log-spaced radii and angles (closed at ``theta = pi/m``)."""
    r = np.geomspace(*r_range, nr)
    th = cfg.half_width * np.geomspace(1e-4, 1.0, nth)
    return r, th


def _refine(x):
    # insert geometric midpoints (grids are log-spaced)
    mid = np.sqrt(x[:-1] * x[1:])
    out = np.empty(2 * x.size - 1)
    out[0::2], out[1::2] = x, mid
    return out


class WeightedSups(NamedTuple):
    f: float
    g: float
    stable: bool  # grid and refined-grid suprema agree to 1e-3


def _grid_sup(oracle: DerivativeOracle, kind: str, k: int, r, th) -> float:
    R, T = np.meshgrid(r, th, indexing="ij")
    x = R + T
    with np.errstate(over="ignore", invalid="ignore"):
        vals = oracle.derivative(kind, k, R, T) * x ** (k + oracle.alpha)
    if not np.all(np.isfinite(vals)):
        if oracle.scaled is None:
            raise OverflowError(f"weighted derivative of order {k} overflows for oracle {oracle.name!r}")
        vals = oracle.scaled(kind, k, R, T)
    return float(np.max(np.abs(vals)))


def weighted_sups(oracle: DerivativeOracle, k: int, grid=None, cfg: SectorConfig | None = None, check: bool = True) -> WeightedSups:
    """Grid suprema of ``(r+theta)^(k+alpha) |d_r^k omega|`` and ``... |d_theta^k omega|``."""
    if k > oracle.K_max:
        raise ValueError(f"derivative order k={k} exceeds K_max={oracle.K_max}")
    if oracle.zero:
        return WeightedSups(0.0, 0.0, True)
    if grid is None:
        if cfg is None:
            raise ValueError("need an evaluation grid or a SectorConfig")
        grid = default_grid(cfg)
    r, th = (np.asarray(a, dtype=float) for a in grid)
    f = _grid_sup(oracle, "r", k, r, th)
    g = _grid_sup(oracle, "theta", k, r, th)
    stable = True
    if check:
        rr, tt = _refine(r), _refine(th)
        f2 = _grid_sup(oracle, "r", k, rr, tt)
        g2 = _grid_sup(oracle, "theta", k, rr, tt)
        stable = abs(f2 - f) <= 1e-3 * max(f2, 1e-300) and abs(g2 - g) <= 1e-3 * max(g2, 1e-300)
    return WeightedSups(f, g, bool(stable))


@dataclass
class NormReport:
    f: list
    g: list
    lam: float
    E: float
    E_tilde: float
    K: int  # truncation index (last k included)
    tail: float  # ratio-test bound on the omitted part of E
    tail_tilde: float
    stable: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _tail_bound(terms) -> tuple[float, float]:
    """Geometric bound ``t_K rho / (1 - rho)`` with ``rho = t_K / t_(K-1)``."""
    tK, tK1 = terms[-1], terms[-2]
    if tK == 0:
        return 0.0, 0.0
    if tK1 == 0:
        raise ValueError("cannot estimate tail: isolated non-zero term")
    rho = tK / tK1
    if rho >= 1:
        raise ValueError(f"series terms do not decay at k={len(terms) - 1} (ratio {rho:.3g}): lam beyond the radius of analyticity")
    return tK * rho / (1 - rho), rho


def series_norm(oracle: DerivativeOracle, lam: float, K_max: int | None = None, grid=None, cfg: SectorConfig | None = None, tol: float = 1e-15) -> NormReport:
    """Truncated ``E`` and ``E~`` with a ratio-test tail bound.

    With ``K_max=None`` the truncation index adapts until the tail bound
    drops below ``tol * E`` (capped by the oracle's ``K_max``).  A fixed
    ``K_max`` truncates there and reports the tail.
    """
    if not lam < 1:
        raise ValueError(f"lam must be < 1, got {lam}")
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    cap = oracle.K_max if K_max is None else int(K_max)
    if cap > oracle.K_max:
        raise ValueError(f"K_max={cap} exceeds the oracle's K_max={oracle.K_max}")
    f, g, terms, tterms = [], [], [], []
    stable = True
    E = Et = 0.0
    for k in range(cap + 1):
        s = weighted_sups(oracle, k, grid, cfg, check=k <= 12)
        stable &= s.stable
        f.append(s.f)
        g.append(s.g)
        w = math.exp(k * math.log(lam) - math.lgamma(k + 1)) if lam > 0 else float(k == 0)
        t = w * (s.f + s.g)
        terms.append(t)
        tterms.append(k * t)
        E += t
        Et += k * t
        if K_max is None and k >= 8:
            if oracle.zero or lam == 0:
                break
            tail, _ = _tail_bound(terms)
            if tail <= tol * E:
                break
    if lam == 0 or oracle.zero:
        tail = tail_t = 0.0
    else:
        tail, rho = _tail_bound(terms)
        # k t_k has ratio rho (k+1)/k; bound with the ratio at the last index
        K = len(terms) - 1
        rho_t = rho * (K + 1) / K
        tail_t = tterms[-1] * rho_t / (1 - rho_t) if rho_t < 1 else math.inf
    return NormReport(f, g, float(lam), E, Et, len(terms) - 1, tail, tail_t, bool(stable))


# --------------------------------------------------------------------------
# majorant flow


@dataclass
class MajorantState:
    time: float
    f: np.ndarray
    g: np.ndarray
    lam: float
    alpha: float
    C: float = DEFAULT_C
    C_lambda: float = DEFAULT_C_LAMBDA

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.f.shape != self.g.shape or self.f.ndim != 1 or self.f.size < 3:
            raise ValueError("f and g must be equal-length sequences with at least 3 entries")
        if np.any(self.f < 0) or np.any(self.g < 0):
            raise ValueError("norm sequences must be non-negative")
        if not 0 < self.lam < 1:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")
        if not (self.C > 0 and self.C_lambda > 0):
            raise ValueError("constants must be positive")
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")

    @property
    def K(self) -> int:
        return self.f.size - 1

    def energies(self, lam: float | None = None) -> tuple[float, float]:
        lam = self.lam if lam is None else lam
        k = np.arange(self.f.size)
        w = np.exp(k * math.log(lam) - gammaln(k + 1))
        t = w * (self.f + self.g)
        return float(np.sum(t)), float(np.sum(k * t))


def power_law_majorant(alpha: float = 0.5, lam0: float = 0.5, K_max: int = DEFAULT_K_MAX, **constants) -> MajorantState:
    """Initial state ``f_k = g_k = (alpha)_k`` (the weighted norms of ``(r+theta)^-alpha``)."""
    seq = np.array([_pochhammer(alpha, k) for k in range(K_max + 1)])
    return MajorantState(0.0, seq, seq.copy(), lam0, alpha, **constants)


def _binomials(K: int) -> np.ndarray:
    B = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for i in range(k + 1):
            B[k, i] = math.comb(k, i)
    return B


def majorant_rhs(f, g, alpha, C, B=None):
    """Right-hand sides of the ``f_k, g_k`` inequalities taken as equalities.

    The loss of one derivative makes ``f_k'`` depend on ``f_(k+1)``; at the
    truncation index it is closed by ratio extrapolation
    ``f_(K+1) = f_K^2 / f_(K-1)``.
    """
    K = f.size - 1
    if B is None:
        B = _binomials(K)
    a = C / (1 - alpha)
    b = C / (1 - alpha) ** 2
    fK1 = f[K] ** 2 / f[K - 1] if f[K - 1] > 0 else 0.0
    fe = np.append(f, fK1)
    A = b * (np.arange(K + 1) + alpha) * (f[0] + f[1])
    df = A * f + a * g[1] * (fe[1:] + f)
    dg = A * g
    for k in range(1, K + 1):
        c = B[k, :k]  # i = 0 .. k-1
        i = np.arange(k)
        j = k - i  # k - i = k .. 1
        df[k] += a * np.sum(c * (f[j] + j * f[j - 1]) * f[i + 1])
        if k >= 2:
            c1, i1 = c[1:], i[1:]
            j1 = k - i1
            df[k] += a * np.sum(c1 * (fe[j1 + 1] + f[j1]) * (f[i1 + 1] + g[i1 + 1]))
        dg[k] += np.sum(c * (b * g[j] * (g[i + 1] + f[i + 1]) + a * (g[j] + f[j]) * g[i + 1]))
    return df, dg


@dataclass
class MajorantTrajectory:
    times: list
    lam: list
    E: list
    E_tilde: list
    dEdt: list  # instantaneous derivative of E along the flow
    tail: list  # last retained term of E relative to E
    final: MajorantState
    stop_reason: str
    alpha: float
    C: float
    C_lambda: float
    lam_zero_time: float | None  # first time lam reaches 0 (lower bound on the existence time)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "final"}
        d["final"] = {"time": self.final.time, "lam": self.final.lam, "f": self.final.f.tolist(), "g": self.final.g.tolist()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def E_nonincreasing(self, tol: float = 1e-12) -> bool:
        E = np.asarray(self.E)
        return bool(np.all(E[1:] <= E[:-1] + tol * np.abs(E[:-1])))


def integrate_majorant(initial: MajorantState, horizon: float, dt: float, guard: float = 1e100) -> MajorantTrajectory:
    """RK4 for the majorant system with ``lam' = -C_lambda E / (1-alpha)^2``.

    Stops at the horizon, when ``lam`` would reach 0 (recording the
    crossing time), or when ``E`` exceeds ``guard`` (partial trajectory).
    """
    if not dt > 0 or not horizon > 0:
        raise ValueError("dt and horizon must be positive")
    s = initial
    K = s.K
    B = _binomials(K)
    alpha, C, Cl = s.alpha, s.C, s.C_lambda
    k = np.arange(K + 1)
    logfact = gammaln(k + 1)

    def weights(lam):
        return np.exp(k * math.log(lam) - logfact)

    def rhs(f, g, lam):
        df, dg = majorant_rhs(f, g, alpha, C, B)
        w = weights(lam)
        E = float(np.sum(w * (f + g)))
        return df, dg, -Cl * E / (1 - alpha) ** 2

    def dE(f, g, lam):
        df, dg, dl = rhs(f, g, lam)
        w = weights(lam)
        Et = float(np.sum(k * w * (f + g)))
        return float(np.sum(w * (df + dg))) + dl / lam * Et

    f, g, lam, t = s.f.copy(), s.g.copy(), s.lam, 0.0
    times, lams, Es, Ets, dEs, tails = [], [], [], [], [], []
    is_zero = not np.any(f) and not np.any(g)

    def record():
        w = weights(lam)
        terms = w * (f + g)
        E = float(np.sum(terms))
        times.append(s.time + t)
        lams.append(lam)
        Es.append(E)
        Ets.append(float(np.sum(k * terms)))
        dEs.append(dE(f, g, lam))
        tails.append(float(terms[-1] / E) if E > 0 else 0.0)

    record()
    stop, lam_zero = "horizon", None
    n_steps = int(math.ceil(horizon / dt - 1e-12))
    for n in range(n_steps):
        h = min(dt, horizon - t)
        k1 = rhs(f, g, lam)
        l2 = lam + 0.5 * h * k1[2]
        if l2 <= 0:
            lam_zero = s.time + t + lam / -k1[2]
            stop = "lam-zero"
            break
        k2 = rhs(f + 0.5 * h * k1[0], g + 0.5 * h * k1[1], l2)
        l3 = lam + 0.5 * h * k2[2]
        if l3 <= 0:
            lam_zero = s.time + t + lam / -k1[2]
            stop = "lam-zero"
            break
        k3 = rhs(f + 0.5 * h * k2[0], g + 0.5 * h * k2[1], l3)
        l4 = lam + h * k3[2]
        if l4 <= 0:
            lam_zero = s.time + t + lam / -k1[2]
            stop = "lam-zero"
            break
        k4 = rhs(f + h * k3[0], g + h * k3[1], l4)
        f = f + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        g = g + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        lam_new = lam + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if lam_new <= 0:
            lam_zero = s.time + t + lam / -k1[2]
            stop = "lam-zero"
            break
        lam = lam_new
        t += h
        record()
        if not math.isfinite(Es[-1]) or Es[-1] > guard:
            stop = "overflow-guard"
            break
    if is_zero:
        lam_zero = None
    final = replace(s, time=s.time + t, f=f, g=g, lam=lam) if lam > 0 else s
    return MajorantTrajectory(times, lams, Es, Ets, dEs, tails, final, stop, alpha, C, Cl, lam_zero)


@dataclass
class BoundVerdict:
    lam_bound: bool  # lam(t) >= lam0 - C ||omega0|| t / (1-alpha)^2
    norm_bound: bool  # E(t) <= C ||omega0||
    lam_margin: float  # min over t of lam(t) - bound(t)
    norm_ratio: float  # max over t of E(t) / ||omega0||
    C: float

    @property
    def ok(self) -> bool:
        return self.lam_bound and self.norm_bound


def majorant_bound_check(traj: MajorantTrajectory, omega0_norm: float | None = None, C: float | None = None, tol: float = 1e-12) -> BoundVerdict:
    """Check the two displayed bounds along a majorant trajectory.

    ``C`` defaults to the trajectory's ``lam`` decay constant, which is the
    constant for which the bounds follow from ``E`` being non-increasing.
    """
    if omega0_norm is None:
        omega0_norm = traj.E[0]
    if C is None:
        C = traj.C_lambda
    t = np.asarray(traj.times) - traj.times[0]
    lam = np.asarray(traj.lam)
    E = np.asarray(traj.E)
    bound = lam[0] - C * omega0_norm * t / (1 - traj.alpha) ** 2
    margin = lam - bound
    lam_ok = bool(np.all(margin >= -tol * max(lam[0], 1.0)))
    if omega0_norm > 0:
        ratio = float(np.max(E) / omega0_norm)
        norm_ok = bool(np.all(E <= max(C, 1.0) * omega0_norm * (1 + tol)))
    else:
        ratio = 0.0
        norm_ok = bool(np.all(E == 0))
    return BoundVerdict(lam_ok, norm_ok, float(np.min(margin)), ratio, float(C))
