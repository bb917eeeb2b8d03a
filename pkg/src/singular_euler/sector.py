"""Sector conventions, graded grids, endpoint-singular quadrature and L^p metrics.

Everything here lives on the fundamental sector ``0 < theta < pi/m`` of an
odd, ``2 pi/m``-periodic angular profile.  Profiles are plain callables of the
angle; the odd/m-fold extension is never materialised, it only enters through
the ``2 m`` multiplicity of the sector in circle integrals.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "Convention",
    "SectorConfig",
    "GradedGrid",
    "make_sector_config",
    "graded_grid",
    "default_grading",
    "quad_power_singular",
    "lp_sphere_distance",
    "lp_loc_distance",
    "lp_loc_constant",
]

Profile = Callable[[np.ndarray], np.ndarray]


class Convention(str, enum.Enum):
    """Sign convention of the angular stream equation.

    ``INTRO``: ``(4 + d^2/dtheta^2) G = g`` (the physical Biot-Savart sign).
    ``BLOWUP``: ``4 G + G'' = -g``, which makes ``g`` and ``G`` share a sign.
    """

    INTRO = "intro"
    BLOWUP = "blowup"


@dataclass(frozen=True)
class SectorConfig:
    m: int
    alpha: float
    convention: Convention = Convention.BLOWUP
    # name of the Biot-Savart kernel variant selected by calibration; None
    # means the default (derived) constants
    kernel_variant: str | None = field(default=None, compare=False)

    @property
    def half_width(self) -> float:
        """Angular width ``pi/m`` of the fundamental sector."""
        return math.pi / self.m

    @property
    def sign(self) -> float:
        """+1 for the blow-up convention, -1 for the physical one."""
        return 1.0 if self.convention is Convention.BLOWUP else -1.0


def make_sector_config(m: int, alpha: float, convention="blowup", kernel_variant=None) -> SectorConfig:
    if isinstance(m, bool) or int(m) != m:
        raise ValueError(f"symmetry order m must be an integer, got {m!r}")
    m = int(m)
    if m < 3:
        raise ValueError(f"symmetry order too low: m={m} (need m >= 3 so that m^2 - 4 > 0)")
    alpha = float(alpha)
    if not (0.0 <= alpha < 1.0) or not math.isfinite(alpha):
        raise ValueError(f"singularity exponent out of range: alpha={alpha} (need 0 <= alpha < 1)")
    try:
        conv = Convention(convention)
    except ValueError:
        raise ValueError(f"unknown sign convention {convention!r}") from None
    return SectorConfig(m=m, alpha=alpha, convention=conv, kernel_variant=kernel_variant)


def default_grading(alpha: float) -> float:
    """Grading exponent ``2/(1-alpha)``.

    With this choice ``theta^-alpha d theta`` becomes ``const * sigma d sigma``
    in the uniform computational variable, so second order survives the
    endpoint singularity.
    """
    return 2.0 / (1.0 - alpha)


@dataclass(frozen=True)
class GradedGrid:
    nodes: np.ndarray  # N-1 interior nodes, strictly increasing
    q: float
    N: int
    upper: float

    @property
    def sigma(self) -> np.ndarray:
        return np.arange(1, self.N) / self.N

    def with_endpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], self.nodes, [self.upper]])


def graded_grid(cfg: SectorConfig, N: int, q: float | None = None) -> GradedGrid:
    """Interior nodes ``(pi/m) (j/N)^q``, ``j = 1..N-1``, clustered at theta = 0."""
    if q is None:
        q = default_grading(cfg.alpha)
    if int(N) != N or N < 4:
        raise ValueError(f"graded grid needs N >= 4 nodes, got N={N}")
    if q < 1:
        raise ValueError(f"grading exponent must be >= 1, got q={q}")
    N = int(N)
    L = cfg.half_width
    nodes = L * (np.arange(1, N) / N) ** q
    return GradedGrid(nodes=nodes, q=float(q), N=N, upper=L)


@lru_cache(maxsize=64)
def _legendre(n: int):
    x, w = roots_legendre(n)
    return x, w


@lru_cache(maxsize=64)
def _jacobi(n: int, beta: float):
    # weight (1-x)^0 (1+x)^(-beta) on [-1, 1]
    x, w = roots_jacobi(n, 0.0, -beta)
    return x, w


def quad_power_singular(
    f: Callable,
    beta: float,
    interval: tuple[float, float],
    n: int = 16,
    levels: int = 24,
    ratio: float = 0.25,
    breakpoints: Iterable[float] = (),
) -> float:
    """Integrate ``f`` over ``interval`` when ``f(x) (x-a)^beta`` is bounded at ``a``.

    The interval is cut into geometric panels shrinking toward the left
    endpoint.  The innermost panel is integrated with Gauss-Jacobi weights
    carrying ``(x-a)^(-beta)``, the rest with ``n``-point Gauss-Legendre.
    Interior ``breakpoints`` (jumps of ``f``) are honoured as panel edges.
    """
    if beta >= 1:
        raise ValueError(f"beta={beta} >= 1: integrand is not integrable at the endpoint")
    a, b = map(float, interval)
    if not b > a:
        return 0.0
    width = b - a
    edges = [a + width * ratio**k for k in range(levels, -1, -1)]
    extra = sorted(x for x in breakpoints if a < x < b)
    if extra:
        edges = sorted(set(edges) | set(extra))
    edges = np.asarray(edges)
    xl, wl = _legendre(n)

    # innermost panel [a, edges[0]] with the singular weight
    h0 = edges[0] - a
    if beta != 0.0:
        xj, wj = _jacobi(n, float(beta))
        t = 0.5 * (xj + 1.0)
        x = a + h0 * t
        # (x - a)^-beta = (h0/2)^-beta (1 + xj)^-beta
        inner = np.dot(wj, np.asarray(f(x), dtype=float) * (x - a) ** beta) * (0.5 * h0) ** (1.0 - beta)
    else:
        x = a + 0.5 * h0 * (xl + 1.0)
        inner = 0.5 * h0 * np.dot(wl, np.asarray(f(x), dtype=float))

    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * xl[None, :]
    vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    outer = np.sum(half * (vals @ wl))
    return float(inner + outer)


def _breaks_of(*profiles) -> list[float]:
    out: list[float] = []
    for p in profiles:
        out.extend(getattr(p, "breakpoints", ()) or ())
    return out


def _as_profile(f) -> Profile:
    if callable(f):
        return f
    c = float(f)
    return lambda x: np.full(np.shape(x), c)


def lp_sphere_distance(f, g, p: float, cfg: SectorConfig, beta: float | None = None, n: int = 24) -> float:
    """``||f - g||_{L^p(S^1)}`` for odd, m-fold symmetric profiles given on the sector.

    ``f`` and ``g`` are callables (or constants).  The endpoint exponent used
    by the singular quadrature defaults to ``alpha * p``.
    """
    if p < 1:
        raise ValueError(f"L^p distance needs p >= 1, got p={p}")
    f, g = _as_profile(f), _as_profile(g)
    if beta is None:
        beta = min(cfg.alpha * p, 0.999)
    integrand = lambda x: np.abs(f(x) - g(x)) ** p
    val = quad_power_singular(integrand, beta, (0.0, cfg.half_width), n=n, breakpoints=_breaks_of(f, g))
    return (2 * cfg.m * val) ** (1.0 / p)


def lp_loc_distance(f, g, p: float, cfg: SectorConfig, balls: int = 40, beta: float | None = None, n: int = 24) -> float:
    """Ball-average metric ``sum_n 2^-n (avg_{B(0, 2^n)} |f-g|^p)^(1/p)`` for angle-only profiles.

    Each ball average is computed as a genuine polar integral (radial Gauss
    rule times the angular sector integral), not by assuming the closed form.
    """
    if p < 1:
        raise ValueError(f"L^p distance needs p >= 1, got p={p}")
    f, g = _as_profile(f), _as_profile(g)
    if beta is None:
        beta = min(cfg.alpha * p, 0.999)
    integrand = lambda x: np.abs(f(x) - g(x)) ** p
    angular = 2 * cfg.m * quad_power_singular(integrand, beta, (0.0, cfg.half_width), n=n, breakpoints=_breaks_of(f, g))
    xr, wr = _legendre(4)
    total = 0.0
    for k in range(balls):
        R = 2.0**k
        rr = 0.5 * R * (xr + 1.0)
        radial = 0.5 * R * np.dot(wr, rr)  # int_0^R r dr
        avg = radial * angular / (math.pi * R * R)
        total += 2.0**-k * avg ** (1.0 / p)
    return total


def lp_loc_constant(p: float, balls: int | None = None) -> float:
    """Ratio ``d_{L^p_loc} / ||.||_{L^p(S^1)}`` for angle-only functions.

    Equals ``2 (2 pi)^(-1/p)`` in the limit of infinitely many balls.
    """
    geo = 2.0 if balls is None else 2.0 * (1.0 - 2.0**-balls)
    return geo * (2 * math.pi) ** (-1.0 / p)
