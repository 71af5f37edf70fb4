"""Classical dynamics of the modulated pendulum.

Hamilton equations: dx/dt = p, dp/dt = -gamma (1 + eps cos t) sin x.
Everything is built on a batch kick-drift-kick (velocity Verlet) step that is
second order in time and exactly symplectic, so Poincare sections, island
boundaries and areas are trustworthy over many drive periods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, DegenerateOrbitError,
                     IllDefinedBoundaryError, OrbitNotFoundError)
from .units import ModelParams

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhaseState:
    x: float
    p: float

    def folded(self) -> "PhaseState":
        return PhaseState(fold_angle(self.x), self.p)


def fold_angle(x):
    """Reduce positions to [-pi, pi)."""
    return (np.asarray(x) + math.pi) % TWO_PI - math.pi


def steps_per_period_from_step(step: float) -> int:
    """Validate that `step` divides the drive period 2 pi; return the count."""
    n = TWO_PI / step
    n_int = round(n)
    if n_int < 1 or abs(n - n_int) > 1e-9 * n_int:
        raise ConfigurationError(
            f"step {step} does not divide the period 2*pi an integer number of times")
    return n_int


def _evolve(x, p, gamma, eps, t0, n_steps, dt):
    """Advance batch arrays (x, p) by n_steps kick-drift-kick steps in place."""
    t = t0
    half = 0.5 * dt
    # force at the current time for the opening half kick
    f = -gamma * (1.0 + eps * math.cos(t)) * np.sin(x)
    for _ in range(n_steps):
        p += half * f
        x += dt * p
        t += dt
        f = -gamma * (1.0 + eps * math.cos(t)) * np.sin(x)
        p += half * f
    return x, p


def _evolve_tangent(x, p, dx, dp, gamma, eps, t0, n_steps, dt):
    """Advance the batch together with one tangent vector per member."""
    t = t0
    half = 0.5 * dt
    drive = 1.0 + eps * math.cos(t)
    f = -gamma * drive * np.sin(x)
    k = -gamma * drive * np.cos(x)          # d(force)/dx
    for _ in range(n_steps):
        p += half * f
        dp += half * k * dx
        x += dt * p
        dx += dt * dp
        t += dt
        drive = 1.0 + eps * math.cos(t)
        f = -gamma * drive * np.sin(x)
        k = -gamma * drive * np.cos(x)
        p += half * f
        dp += half * k * dx
    return x, p, dx, dp


def strobe_map(x, p, params: ModelParams, n_periods: int = 1,
               steps_per_period: int = 256, t0: float = 0.0):
    """Apply the stroboscopic (one-period) map n_periods times to batch arrays."""
    x = np.array(x, dtype=float, copy=True)
    p = np.array(p, dtype=float, copy=True)
    dt = TWO_PI / steps_per_period
    return _evolve(x, p, params.gamma, params.epsilon, t0,
                   n_periods * steps_per_period, dt)


def integrate_trajectory(initial: PhaseState, params: ModelParams,
                         duration: float, step: float):
    """Integrate one trajectory; returns (times, x, p) sampled every step.

    `step` must divide 2 pi so that stroboscopic samples land exactly on
    multiples of the drive period.
    """
    spp = steps_per_period_from_step(step)
    dt = TWO_PI / spp
    n_steps = int(round(duration / dt))
    times = np.arange(n_steps + 1) * dt
    xs = np.empty(n_steps + 1)
    ps = np.empty(n_steps + 1)
    x = np.array([initial.x], dtype=float)
    p = np.array([initial.p], dtype=float)
    xs[0], ps[0] = x[0], p[0]
    for i in range(n_steps):
        _evolve(x, p, params.gamma, params.epsilon, i * dt, 1, dt)
        xs[i + 1], ps[i + 1] = x[0], p[0]
    return times, xs, ps


def poincare_sos(params: ModelParams, seeds, n_periods: int,
                 steps_per_period: int = 256):
    """Stroboscopic point clouds, one (n_periods, 2) array per seed.

    Positions are folded to [-pi, pi).
    """
    if n_periods < 1:
        raise ConfigurationError("n_periods must be >= 1")
    x = np.array([s.x for s in seeds], dtype=float)
    p = np.array([s.p for s in seeds], dtype=float)
    dt = TWO_PI / steps_per_period
    clouds = np.empty((len(seeds), n_periods, 2))
    for k in range(n_periods):
        _evolve(x, p, params.gamma, params.epsilon, 0.0, steps_per_period, dt)
        clouds[:, k, 0] = fold_angle(x)
        clouds[:, k, 1] = p
    return [clouds[i] for i in range(len(seeds))]


# --- Lyapunov chart ----------------------------------------------------------

DEFAULT_LYAP_THRESHOLD = 0.012   # per unit dimensionless time


@dataclass
class LyapunovChart:
    x_edges: np.ndarray
    p_edges: np.ndarray
    exponents: np.ndarray          # shape (nx, np), per unit time
    threshold: float
    chaotic_fraction: float


def lyapunov_chart(params: ModelParams, x_range=(-math.pi, math.pi),
                   p_range=(-2.0, 2.0), boxes=(100, 100), horizon: int = 200,
                   steps_per_period: int = 256,
                   threshold: float = DEFAULT_LYAP_THRESHOLD) -> LyapunovChart:
    """Local Lyapunov rate per phase-space box from tangent-vector growth.

    One trajectory is launched at each box center with tangent (1, 0); the
    tangent is renormalized each drive period and the summed log growth is
    divided by the elapsed dimensionless time.
    """
    if horizon < 50:
        raise ConfigurationError("horizon must be >= 50 periods")
    nx, npb = boxes
    x_edges = np.linspace(*x_range, nx + 1)
    p_edges = np.linspace(*p_range, npb + 1)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    pc = 0.5 * (p_edges[:-1] + p_edges[1:])
    X, P = np.meshgrid(xc, pc, indexing="ij")
    x = X.ravel().copy()
    p = P.ravel().copy()
    dx = np.ones_like(x)
    dp = np.zeros_like(p)
    log_growth = np.zeros_like(x)
    dt = TWO_PI / steps_per_period
    for k in range(horizon):
        _evolve_tangent(x, p, dx, dp, params.gamma, params.epsilon,
                        k * TWO_PI, steps_per_period, dt)
        norm = np.hypot(dx, dp)
        log_growth += np.log(norm)
        dx /= norm
        dp /= norm
    rates = (log_growth / (horizon * TWO_PI)).reshape(nx, npb)
    frac = float(np.mean(rates > threshold))
    return LyapunovChart(x_edges, p_edges, rates, threshold, frac)


def chaotic_sea_area(chart: LyapunovChart) -> float:
    """Phase-space area of above-threshold boxes."""
    box_area = ((chart.x_edges[-1] - chart.x_edges[0]) / (len(chart.x_edges) - 1)
                * (chart.p_edges[-1] - chart.p_edges[0]) / (len(chart.p_edges) - 1))
    return float(np.sum(chart.exponents > chart.threshold) * box_area)


# --- Periodic orbits and islands ---------------------------------------------

@dataclass
class IslandInfo:
    center: PhaseState
    map_period: int
    area: float = 0.0
    chaotic_sea_area: float | None = None


def _map_point(z, params, map_period, steps_per_period):
    x, p = strobe_map(np.array([z[0]]), np.array([z[1]]), params,
                      n_periods=map_period, steps_per_period=steps_per_period)
    return np.array([x[0], p[0]])


def map_jacobian(z, params, map_period, steps_per_period=256, h=1e-6):
    """Central-difference Jacobian of the iterated stroboscopic map."""
    x0 = np.array([z[0] + h, z[0] - h, z[0], z[0]])
    p0 = np.array([z[1], z[1], z[1] + h, z[1] - h])
    x1, p1 = strobe_map(x0, p0, params, n_periods=map_period,
                        steps_per_period=steps_per_period)
    return np.array([[(x1[0] - x1[1]) / (2 * h), (x1[2] - x1[3]) / (2 * h)],
                     [(p1[0] - p1[1]) / (2 * h), (p1[2] - p1[3]) / (2 * h)]])


def _newton_fixed_point(z0, params, map_period, steps_per_period,
                        tol=1e-10, max_iter=60):
    z = np.array(z0, dtype=float)
    for _ in range(max_iter):
        fz = _map_point(z, params, map_period, steps_per_period)
        res = fz - z
        res[0] = fold_angle(res[0])
        if np.hypot(*res) < tol:
            return z
        jac = map_jacobian(z, params, map_period, steps_per_period) - np.eye(2)
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        if abs(det) < 1e-14:
            raise DegenerateOrbitError(f"singular Jacobian at {z}")
        z = z - np.linalg.solve(jac, res)
    raise OrbitNotFoundError(f"Newton did not converge from {z0}")


def find_periodic_orbit(params: ModelParams, map_period: int,
                        search_axis: str, bracket=None,
                        steps_per_period: int = 256,
                        n_scan: int = 200,
                        trace_margin: float = 0.1) -> IslandInfo:
    """Locate a stable periodic orbit whose center lies on a phase-space axis.

    A signed transverse displacement of the iterated map is scanned along the
    axis; each sign change seeds a 2D Newton refinement.  Among the converged
    orbits with |trace| <= 2 - trace_margin the one farthest from the origin
    is returned, which picks the bifurcated pair over the central point when
    both exist.  trace_margin=0.1 filters near-parabolic resonance slivers;
    pass 0 when tracking orbits right at a bifurcation.
    """
    if search_axis not in ("momentum", "position"):
        raise ConfigurationError("search_axis must be 'momentum' or 'position'")
    if bracket is None:
        bracket = (0.3, 2.2) if search_axis == "momentum" else (-0.3, 2.2)
    vals = np.linspace(bracket[0], bracket[1], n_scan)
    if search_axis == "momentum":
        x0, p0 = np.zeros_like(vals), vals.copy()
    else:
        x0, p0 = vals.copy(), np.zeros_like(vals)
    x1, p1 = strobe_map(x0, p0, params, n_periods=map_period,
                        steps_per_period=steps_per_period)
    resid = fold_angle(x1 - x0) if search_axis == "momentum" else p1 - p0
    sign_changes = np.nonzero(np.sign(resid[:-1]) * np.sign(resid[1:]) < 0)[0]
    candidates = []
    for i in sign_changes:
        v = 0.5 * (vals[i] + vals[i + 1])
        z0 = (0.0, v) if search_axis == "momentum" else (v, 0.0)
        try:
            z = _newton_fixed_point(z0, params, map_period, steps_per_period)
        except (OrbitNotFoundError, DegenerateOrbitError):
            continue
        z[0] = fold_angle(z[0])
        axis_val, off_val = (z[1], z[0]) if search_axis == "momentum" else (z[0], z[1])
        margin = 0.05 * (bracket[1] - bracket[0])
        if not (bracket[0] - margin <= axis_val <= bracket[1] + margin):
            continue  # Newton escaped the search interval
        if abs(off_val) > 0.1:
            continue  # not an on-axis orbit
        jac = map_jacobian(z, params, map_period, steps_per_period)
        if abs(np.trace(jac)) <= 2.0 - trace_margin:
            candidates.append(z)
    if not candidates:
        raise OrbitNotFoundError(
            f"no stable period-{map_period} orbit bracketed on the "
            f"{search_axis} axis in {bracket}")
    best = max(candidates, key=lambda z: math.hypot(z[0], z[1]))
    return IslandInfo(center=PhaseState(float(fold_angle(best[0])), float(best[1])),
                      map_period=map_period)


def _bounded_mask(x0, p0, center, params, map_period, steps_per_period,
                  horizon, escape_radius):
    """True where the orbit stays within escape_radius of center for `horizon`
    iterations of the map_period-fold stroboscopic map."""
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    dt = TWO_PI / steps_per_period
    alive = np.ones(x.shape, dtype=bool)
    chunk = 50  # check escape every `chunk` map iterations
    done = 0
    while done < horizon:
        n = min(chunk, horizon - done)
        _evolve(x, p, params.gamma, params.epsilon, 0.0,
                n * map_period * steps_per_period, dt)
        done += n
        # folded x distance: island-trapped orbits ride the resonance, so the
        # unfolded x may drift by 2*pi per period.  Non-librating orbits sweep
        # the whole folded cell, so their folded distance reaches past pi and
        # any escape radius below pi flags them.
        r = np.hypot(fold_angle(x - center[0]), p - center[1])
        alive &= r <= escape_radius
        if not alive.any():
            break
    return alive


def island_boundary(params: ModelParams, island: IslandInfo, n_angles: int = 64,
                    r_max: float = 1.2, horizon: int = 2000,
                    steps_per_period: int = 64, n_bisect: int = 12,
                    n_scan_radii: int = 32, escape_radius: float | None = None):
    """Radial boundary r(theta) of a stable island around its center.

    For each angle, launches are scanned in radius; the boundary is bisected
    between the outermost librating launch and the innermost escaping one.
    Escape means leaving a disk of radius 3 * r_max around the center within
    `horizon` iterations of the stroboscopic map.
    """
    cx, cp = island.center.x, island.center.p
    thetas = np.linspace(0.0, TWO_PI, n_angles, endpoint=False)
    radii = np.linspace(r_max / n_scan_radii, r_max, n_scan_radii)
    TH, R = np.meshgrid(thetas, radii, indexing="ij")
    x0 = cx + R * np.cos(TH)
    p0 = cp + R * np.sin(TH)
    if escape_radius is None:
        # below pi so that rotational orbits sweeping the folded cell escape,
        # and tight enough that orbits librating around a neighboring island
        # center are not miscounted as members
        escape_radius = 1.25 * r_max
    bounded = _bounded_mask(x0.ravel(), p0.ravel(), (cx, cp), params,
                            island.map_period, steps_per_period, horizon,
                            escape_radius).reshape(n_angles, n_scan_radii)
    lo = np.zeros(n_angles)
    hi = np.full(n_angles, np.nan)
    for i in range(n_angles):
        esc = np.nonzero(~bounded[i])[0]
        if esc.size == 0:
            continue  # no escape within r_max: ill bracketed for this angle
        first_escape = esc[0]
        lo[i] = radii[first_escape - 1] if first_escape > 0 else 0.0
        hi[i] = radii[first_escape]
    bad = np.isnan(hi)
    if np.mean(bad) > 0.10:
        raise IllDefinedBoundaryError(
            f"boundary bracketing failed on {int(bad.sum())}/{n_angles} angles")
    hi[bad] = r_max  # rare angles without bracket: use the scan limit
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        x0 = cx + mid * np.cos(thetas)
        p0 = cp + mid * np.sin(thetas)
        ok = _bounded_mask(x0, p0, (cx, cp), params, island.map_period,
                           steps_per_period, horizon, escape_radius)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return thetas, 0.5 * (lo + hi)


def island_area(params: ModelParams, island: IslandInfo, n_angles: int = 64,
                **kwargs) -> float:
    """Island area from the polar boundary integral A = 1/2 * closed-int r^2 dtheta."""
    thetas, r = island_boundary(params, island, n_angles=n_angles, **kwargs)
    dtheta = TWO_PI / len(thetas)
    # trapezoid over the periodically closed boundary
    return float(0.5 * np.sum(r ** 2) * dtheta)


def island_area_monte_carlo(params: ModelParams, island: IslandInfo,
                            n_samples: int = 4000, r_max: float = 1.2,
                            horizon: int = 2000, steps_per_period: int = 64,
                            seed: int = 0, escape_radius: float | None = None) -> float:
    """Independent membership estimate: fraction of a disk that stays librating."""
    rng = np.random.default_rng(seed)
    r = r_max * np.sqrt(rng.random(n_samples))
    th = TWO_PI * rng.random(n_samples)
    x0 = island.center.x + r * np.cos(th)
    p0 = island.center.p + r * np.sin(th)
    if escape_radius is None:
        escape_radius = 1.25 * r_max
    ok = _bounded_mask(x0, p0, (island.center.x, island.center.p), params,
                       island.map_period, steps_per_period, horizon,
                       escape_radius)
    return float(np.mean(ok) * math.pi * r_max ** 2)


# --- Bifurcation diagram ------------------------------------------------------

@dataclass
class BifurcationCurve:
    gamma_values: np.ndarray
    x_star_values: np.ndarray
    gamma_b: float


def _x_star(gamma: float, epsilon: float, steps_per_period: int = 256) -> float:
    """|x*| of the stable period-2 orbit at p = 0 (0 before the bifurcation)."""
    params = ModelParams(gamma=gamma, epsilon=epsilon, hbar_eff=1.0)
    try:
        orbit = find_periodic_orbit(params, map_period=2, search_axis="position",
                                    bracket=(-0.3, 2.2), trace_margin=0.0,
                                    steps_per_period=steps_per_period)
    except OrbitNotFoundError:
        return 0.0
    return abs(orbit.center.x)


def bifurcation_diagram(epsilon: float, gamma_range,
                        steps_per_period: int = 256,
                        gamma_tol: float = 1e-4) -> BifurcationCurve:
    """x*(gamma) of the period-2 pair plus the bifurcation point gamma_b.

    gamma_b is located by bisection on the existence of x* > 1e-4 between the
    last gamma without a pair and the first gamma with one.
    """
    gammas = np.asarray(gamma_range, dtype=float)
    if np.any(np.diff(gammas) <= 0):
        raise ConfigurationError("gamma_range must be sorted ascending")
    xs = np.array([_x_star(g, epsilon, steps_per_period) for g in gammas])
    above = xs > 1e-4
    if not above.any():
        return BifurcationCurve(gammas, xs, float("nan"))
    i1 = int(np.argmax(above))
    lo = gammas[i1 - 1] if i1 > 0 else max(gammas[0] - 0.05, 0.0)
    hi = gammas[i1]
    while hi - lo > gamma_tol:
        mid = 0.5 * (lo + hi)
        if _x_star(mid, epsilon, steps_per_period) > 1e-4:
            hi = mid
        else:
            lo = mid
    return BifurcationCurve(gammas, xs, 0.5 * (lo + hi))


def sqrt_law_fit(curve: BifurcationCurve, window: float = 0.02):
    """Fit x* = C sqrt(gamma - gamma_b) just above the bifurcation.

    Returns (C, relative_rms_residual) over gamma in (gamma_b, gamma_b+window].
    """
    g, x, gb = curve.gamma_values, curve.x_star_values, curve.gamma_b
    sel = (g > gb) & (g <= gb + window) & (x > 1e-4)
    if sel.sum() < 3:
        raise ConfigurationError("not enough points above gamma_b for the fit")
    root = np.sqrt(g[sel] - gb)
    c = float(np.sum(root * x[sel]) / np.sum(root ** 2))
    resid = x[sel] - c * root
    rel = float(np.sqrt(np.mean(resid ** 2)) / np.sqrt(np.mean(x[sel] ** 2)))
    return c, rel
