"""Lagrangian vortex particles for odd, m-fold symmetric 2D Euler flow.

Particles live in the fundamental sector and carry vorticity and area; the
odd/m-fold images enter only through the two reflection terms of the polar
kernel.  Velocities are direct sums of the regularised kernel

    u_r      = c/r  sum_j w_j omega_j lam [sin(m(phi-theta))/D_-  + sin(m(phi+theta))/D_+]
    u_theta  = c/r  sum_j w_j omega_j sgn(s-r) lam [(lam - cos_- + e/2)/D_- - (lam - cos_+ + e/2)/D_+]

with ``c = m/(2 pi)``, ``lam = (min(s,r)/max(s,r))^m`` and the blob
denominator ``D = 1 - 2 lam cos + lam^2 + e lam``, ``e = (m delta)^2``.
These are the exact polar derivatives of the regularised stream function
``(1/4pi) sum w omega [F(D_-) - F(D_+)]`` with ``F = ln D`` (second-order
blob) or ``F = ln D - a - a^2``, ``a = e lam / D`` (high-order blob whose
vorticity has vanishing second moment; the velocity terms then pick up
the factors shown in ``_kernel_sum``).  Both are invariant
under ``lam -> 1/lam``, so the discrete velocity is smooth and exactly
divergence free.  ``delta`` is a relative (log-polar) blob radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np
from numba import njit, prange

from .sector import SectorConfig, default_grading

__all__ = [
    "ParticleCloud",
    "ParticleExitError",
    "AngularProfile",
    "OriginLimitReport",
    "init_cloud",
    "cloud_velocity",
    "step2d",
    "ring_profile",
    "origin_limit_experiment",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "singular-euler-cloud"

# prefer OpenMP/workqueue over probing an outdated TBB runtime
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


class ParticleExitError(RuntimeError):
    """A particle reached r <= 0 or left the open sector."""

    def __init__(self, indices, time):
        self.indices = np.asarray(indices)
        self.time = time
        super().__init__(f"particles {self.indices[:8].tolist()} left the sector at t={time:.6g}")


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    r: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    w: np.ndarray
    blob: np.ndarray  # relative blob radius per particle (log-polar units)
    time: float = 0.0
    shape: tuple | None = None  # (nr, ntheta) when laid out as a tensor grid, row-major in r

    @property
    def size(self) -> int:
        return self.r.size


def init_cloud(omega0, r_span=(1e-4, 1.0), resolution=(64, 32), cfg: SectorConfig | None = None, q: float | None = None, blob_factor: float = 0.5) -> ParticleCloud:
    """Tensor grid of particles: log-uniform in r, graded toward theta = 0.

    Particles sit at cell centres (geometric mean in r, midpoint of the
    computational variable in theta); weights are exact cell areas.  The
    blob radius is ``blob_factor`` times the larger local spacing in
    ``(ln r, theta)``.
    """
    if cfg is None:
        raise ValueError("init_cloud needs a SectorConfig")
    r_min, r_max = map(float, r_span)
    if r_min <= 0:
        raise ValueError(f"r_min must be positive, got {r_min}")
    if r_max <= r_min:
        raise ValueError("empty radial span")
    nr, nth = map(int, resolution)
    if nr < 16 or nth < 16:
        raise ValueError(f"resolution must be at least 16x16, got {nr}x{nth}")
    if q is None:
        q = default_grading(cfg.alpha)
    L = cfg.half_width
    re = np.geomspace(r_min, r_max, nr + 1)
    rc = np.sqrt(re[:-1] * re[1:])
    te = L * (np.arange(nth + 1) / nth) ** q
    tc = L * ((np.arange(nth) + 0.5) / nth) ** q
    dx = math.log(r_max / r_min) / nr
    dth = np.diff(te)
    R, T = np.meshgrid(rc, tc, indexing="ij")
    area = np.outer(0.5 * (re[1:] ** 2 - re[:-1] ** 2), dth)
    blob = np.broadcast_to(blob_factor * np.maximum(dx, dth)[None, :], R.shape)
    vals = np.asarray(omega0(R, T), dtype=float) * np.ones(R.shape)
    return ParticleCloud(
        r=R.ravel().copy(),
        theta=T.ravel().copy(),
        omega=vals.ravel().copy(),
        w=area.ravel().copy(),
        blob=blob.ravel().copy(),
        shape=(nr, nth),
    )


@njit(parallel=True, cache=True)
def _kernel_sum(tr, tth, src_rm, src_sin, src_cos, src_q, src_e, m, full, high):
    nt = tr.size
    ns = src_rm.size
    ur = np.empty(nt)
    ut = np.empty(nt)
    for i in prange(nt):
        r = tr[i]
        rm = r**m
        st = math.sin(m * tth[i])
        ct = math.cos(m * tth[i])
        acc_r = 0.0
        acc_t = 0.0
        for j in range(ns):
            sm = src_rm[j]
            if sm < rm:
                lam = sm / rm
                sgn = -1.0
            else:
                lam = rm / sm
                sgn = 1.0
            sp_, cp_ = src_sin[j], src_cos[j]
            c_m = cp_ * ct + sp_ * st
            s_m = sp_ * ct - cp_ * st
            c_p = cp_ * ct - sp_ * st
            s_p = sp_ * ct + cp_ * st
            e = src_e[j]
            a = (1.0 - lam) * (1.0 - lam) + e * lam
            Dm = a + 2.0 * lam * (1.0 - c_m)
            Dp = a + 2.0 * lam * (1.0 - c_p)
            qj = src_q[j] * lam
            if high:
                am = e * lam / Dm
                ap = e * lam / Dp
                fm = 1.0 + am + 2.0 * am * am
                fp = 1.0 + ap + 2.0 * ap * ap
                hm = fm * (lam - c_m + 0.5 * e) - (0.5 + am) * e
                hp = fp * (lam - c_p + 0.5 * e) - (0.5 + ap) * e
            else:
                fm = 1.0
                fp = 1.0
                hm = lam - c_m + 0.5 * e
                hp = lam - c_p + 0.5 * e
            if full:
                acc_r += qj * (fm * s_m / Dm + fp * s_p / Dp)
            else:
                acc_r += qj * (fm * s_m / Dm)
            acc_t += sgn * qj * (hm / Dm - hp / Dp)
        ur[i] = acc_r / r
        ut[i] = acc_t / r
    return ur, ut


def _variant_flags(cfg: SectorConfig):
    from .biot_savart import KernelVariant

    v = KernelVariant.parse(cfg.kernel_variant)
    return v.scale(cfg.m), v.domain == "full"


def cloud_velocity(cloud: ParticleCloud, targets, delta=None, cfg: SectorConfig | None = None, blob_order: int = 4):
    """Regularised kernel sums at ``targets = (r, theta)``; returns ``(u_r, u_theta)`` arrays.

    ``delta`` (relative blob radius) overrides the per-particle radii.
    ``blob_order=2`` uses the plain ``ln D_delta`` stream function;
    ``blob_order=4`` uses ``ln D_delta - a - a^2`` with ``a = e lam / D_delta``:
    near the diagonal this is the algebraic blob with circulation profile
    ``1 - (1 - u)/(1 + u)^3`` (``u = rho^2/delta^2``), whose second moment
    vanishes, so the smoothing error drops from ``O(delta^2 ln delta)`` to
    ``O(delta^4 ln delta)``; the ``lam -> 1/lam`` invariance is kept.
    Summation is sequential over sources for every target, so results do
    not depend on the thread count.
    """
    if cfg is None:
        raise ValueError("cloud_velocity needs a SectorConfig")
    tr, tth = (np.ascontiguousarray(np.atleast_1d(np.asarray(a, dtype=float))) for a in targets)
    if delta is not None and not delta > 0:
        raise ValueError("blob radius must be positive")
    if blob_order not in (2, 4):
        raise ValueError(f"blob order must be 2 or 4, got {blob_order}")
    m = cfg.m
    blob = cloud.blob if delta is None else np.full(cloud.size, float(delta))
    e = (m * blob) ** 2
    scale, full = _variant_flags(cfg)
    ur, ut = _kernel_sum(
        tr,
        tth,
        np.ascontiguousarray(cloud.r**m),
        np.ascontiguousarray(np.sin(m * cloud.theta)),
        np.ascontiguousarray(np.cos(m * cloud.theta)),
        np.ascontiguousarray(cloud.w * cloud.omega),
        np.ascontiguousarray(e),
        float(m),
        full,
        blob_order == 4,
    )
    c = scale * m / (2 * math.pi)
    return c * ur, c * ut


def step2d(cloud: ParticleCloud, dt: float, delta=None, cfg: SectorConfig | None = None) -> ParticleCloud:
    """Classical RK4 for ``dr/dt = u_r``, ``dtheta/dt = u_theta / r``; values and weights untouched."""
    L = cfg.half_width

    def rhs(r, th):
        ur, ut = cloud_velocity(replace(cloud, r=r, theta=th), (r, th), delta, cfg)
        return ur, ut / r

    r0, t0 = cloud.r, cloud.theta
    k1 = rhs(r0, t0)
    k2 = rhs(r0 + 0.5 * dt * k1[0], t0 + 0.5 * dt * k1[1])
    k3 = rhs(r0 + 0.5 * dt * k2[0], t0 + 0.5 * dt * k2[1])
    k4 = rhs(r0 + dt * k3[0], t0 + dt * k3[1])
    r = r0 + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    th = t0 + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    bad = np.nonzero(~(r > 0) | ~(th > 0) | ~(th < L))[0]
    if bad.size:
        raise ParticleExitError(bad, cloud.time + dt)
    return replace(cloud, r=r, theta=th, time=cloud.time + dt)


# --------------------------------------------------------------------------
# ring profiles


@dataclass(frozen=True)
class AngularProfile:
    theta: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.theta, self.values)


def ring_profile(cloud: ParticleCloud, r0: float, cfg: SectorConfig | None = None) -> AngularProfile:
    """Vorticity on the circle ``r = r0``.

    Every angular column of the initial tensor grid is a material curve;
    its crossing with ``r = r0`` is located by linear interpolation in
    ``ln r`` between the two nearest particles of that column, and the
    carried vorticity is interpolated the same way.
    """
    if cloud.shape is None:
        raise ValueError("ring_profile needs a tensor-grid cloud")
    nr, nth = cloud.shape
    band = (cloud.r >= 0.5 * r0) & (cloud.r <= 2.0 * r0)
    if not np.any(band):
        raise ValueError(f"no particles in the band [{0.5 * r0:g}, {2 * r0:g}]")
    x = np.log(cloud.r.reshape(nr, nth))
    th = cloud.theta.reshape(nr, nth)
    om = cloud.omega.reshape(nr, nth)
    x0 = math.log(r0)
    out_t = np.empty(nth)
    out_v = np.empty(nth)
    for j in range(nth):
        col = x[:, j]
        k = int(np.searchsorted(col, x0)) - 1
        k = min(max(k, 0), nr - 2)
        a = (x0 - col[k]) / (col[k + 1] - col[k])
        out_t[j] = (1 - a) * th[k, j] + a * th[k + 1, j]
        out_v[j] = (1 - a) * om[k, j] + a * om[k + 1, j]
    order = np.argsort(out_t)
    return AngularProfile(out_t[order], out_v[order])


# --------------------------------------------------------------------------
# origin-limit experiment


@dataclass
class OriginLimitReport:
    r0: list
    value_distance: list  # sup over time of max_j |ring - g| / max_j |g|
    angle_distance: list  # sup over time of max_j |theta_2D - theta_1D| / (pi/m)
    times: list
    series: dict  # r0 -> list of (t, value distance, angle distance)
    T_star: float | None
    horizon: float
    particles: int
    outer_tail_bound: list  # far-field truncation estimate per r0
    core_bound: list  # excluded-core estimate per r0

    CSV_COLUMNS = ("r0", "t", "value_distance", "angle_distance")

    def rows(self):
        for r0 in self.r0:
            for t, vd, ad in self.series[r0]:
                yield (r0, t, vd, ad)

    def monotone(self, metric: str = "value") -> bool:
        d = self.value_distance if metric == "value" else self.angle_distance
        order = np.argsort(self.r0)[::-1]  # from largest r0 to smallest
        vals = np.asarray(d)[order]
        return bool(np.all(np.diff(vals) < 0))


def origin_limit_experiment(
    cfg: SectorConfig,
    r0_list: Sequence[float] = (1e-1, 3e-2, 1e-2),
    horizon: float | None = None,
    horizon_fraction: float = 0.05,
    T_star: float | None = None,
    resolution=(120, 80),
    r_span=(1e-4, 1.0),
    steps: int = 8,
    markers: int = 1024,
    q: float | None = None,
    blob_factor: float = 0.5,
) -> OriginLimitReport:
    """Compare 2D ring profiles near the origin with the scale-invariant 1D flow.

    The 2D run uses the physical Biot-Savart law with the 0-homogeneous datum
    ``omega0 = -theta^-alpha``; the 1D run evolves ``g0 = theta^-alpha`` in the
    blow-up convention, which is the same flow with the sign of the
    vorticity reversed.  Rings are compared with ``-g``.

    ``horizon`` defaults to ``horizon_fraction * T*``, with ``T*`` estimated
    from a 1D blow-up run when not given.  Whenever ``T*`` is known the
    horizon must not exceed ``0.1 T*``.
    """
    from . import si_euler as se

    cfg1 = replace(cfg, convention=type(cfg.convention)("blowup"))
    if horizon is None:
        if not 0 < horizon_fraction <= 0.1:
            raise ValueError("horizon must be at most 0.1 T*")
        if T_star is None:
            T_star = se.run_blowup(cfg1, N=markers).T_star
        horizon = horizon_fraction * T_star
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if T_star is not None and horizon > 0.1 * T_star * (1 + 1e-12):
        raise ValueError(f"horizon {horizon:g} exceeds 0.1 T* = {0.1 * T_star:g}")
    if steps < 1:
        raise ValueError("need at least one step")
    alpha = cfg.alpha
    cloud = init_cloud(lambda r, th: -(th ** (-alpha)) if alpha else -np.ones_like(th), r_span, resolution, cfg, q=q, blob_factor=blob_factor)
    state = se.init_markers(cfg1, markers)
    dt = horizon / steps
    L = cfg.half_width
    _, nth = cloud.shape
    th0 = cloud.theta[:nth]  # column labels (initial angles)
    series = {r0: [] for r0 in r0_list}

    def record():
        g1 = se.angular_profile(state)
        for r0 in r0_list:
            ring = ring_profile(cloud, r0, cfg)
            ref = g1(ring.theta)
            vd = float(np.max(np.abs(-ring.values - ref)) / np.max(np.abs(ref)))
            # angle metric: column crossing versus the 1D characteristic of its label
            col = _column_crossings(cloud, r0)
            ad = float(np.max(np.abs(col - state.position(th0))) / L)
            series[r0].append((cloud.time, vd, ad))

    record()
    for _ in range(steps):
        cloud = step2d(cloud, dt, None, cfg)
        state = se.step(state, dt, cfg1)
        record()
    vd = [max(v for _, v, _ in series[r0]) for r0 in r0_list]
    ad = [max(a for _, _, a in series[r0]) for r0 in r0_list]
    # far-field and core truncation estimates of the angular velocity error
    gL1 = (L ** (1 - alpha) / (1 - alpha)) if alpha < 1 else math.inf
    m = cfg.m
    outer = [m / (2 * math.pi) * 2 * gL1 * (r0 / r_span[1]) ** (m - 2) / (m - 2) for r0 in r0_list]
    core = [m / (2 * math.pi) * 2 * gL1 * (r_span[0] / r0) ** (m + 2) / (m + 2) for r0 in r0_list]
    return OriginLimitReport(list(r0_list), vd, ad, [t for t, _, _ in series[r0_list[0]]], series, T_star, float(horizon), cloud.size, outer, core)


def _column_crossings(cloud: ParticleCloud, r0: float) -> np.ndarray:
    nr, nth = cloud.shape
    x = np.log(cloud.r.reshape(nr, nth))
    th = cloud.theta.reshape(nr, nth)
    x0 = math.log(r0)
    out = np.empty(nth)
    for j in range(nth):
        col = x[:, j]
        k = min(max(int(np.searchsorted(col, x0)) - 1, 0), nr - 2)
        a = (x0 - col[k]) / (col[k + 1] - col[k])
        out[j] = (1 - a) * th[k, j] + a * th[k + 1, j]
    return out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(cloud: ParticleCloud, path, cfg: SectorConfig | None = None) -> None:
    """One JSON header line, then little-endian float64 arrays r, theta, omega, w."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "count": int(cloud.size),
        "time": float(cloud.time),
        "shape": list(cloud.shape) if cloud.shape is not None else None,
        "arrays": ["r", "theta", "omega", "w"],
        "dtype": "<f8",
        "blob": [float(b) for b in cloud.blob],
    }
    if cfg is not None:
        header["m"] = cfg.m
        header["alpha"] = cfg.alpha
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in (cloud.r, cloud.theta, cloud.omega, cloud.w):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParticleCloud:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a particle checkpoint")
        n = header["count"]
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 4 * n:
        raise ValueError(f"checkpoint holds {data.size} values, expected {4 * n}")
    r, th, om, w = (data[k * n : (k + 1) * n].astype(float) for k in range(4))
    shape = tuple(header["shape"]) if header.get("shape") else None
    return ParticleCloud(r, th, om, w, np.asarray(header["blob"], float), header["time"], shape)
