"""Two-level reductions: the asymmetric doublet and the Landau-Zener drift.

The doublet Hamiltonian is [[E0 - A/2, delta/2], [delta/2, E0 + A/2]] up to
the sign convention of the asymmetry A.  The accelerated-frame drift through
the beta = 0 avoided crossing reduces to the rescaled Landau-Zener problem
i h' d/dt' |psi> = [[t', 1], [1, -t']] |psi>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import (ConfigurationError, FitFailureError, NumericalError,
                     ParameterDomainError)


@dataclass(frozen=True)
class DoubletModel:
    base_energy: float
    asymmetry: float
    coupling: float          # delta / 2

    def __post_init__(self):
        if self.coupling < 0:
            raise ParameterDomainError(f"coupling must be >= 0, got {self.coupling}")

    @property
    def delta(self) -> float:
        return 2.0 * self.coupling


def asymmetric_doublet(model: DoubletModel, hbar_eff: float):
    """Tunneling period and contrast of an asymmetric doublet.

    T_A = hbar_eff / sqrt(delta^2 + A^2); the tunneling fraction
    delta^2 / (delta^2 + A^2) is the share of the population that actually
    crosses.
    """
    delta = model.delta
    a = model.asymmetry
    if delta == 0.0 and a == 0.0:
        raise ConfigurationError("delta = A = 0 leaves the period undefined")
    rabi = math.hypot(delta, a)
    return hbar_eff / rabi, delta ** 2 / rabi ** 2


def island_asymmetry(p_star: float, hbar_eff: float, beta: float) -> float:
    """A = 2 p* hbar_eff beta, the band-energy offset at finite quasimomentum."""
    return 2.0 * p_star * hbar_eff * beta


@dataclass(frozen=True)
class LZConfig:
    """Accelerated-frame drift through the beta = 0 crossing.

    beta runs from beta0 to -beta0 over n_acc drive periods; atoms starting
    at beta_ini cross zero at t_cross.  delta is the two-band coupling the
    rescaled problem is built from.
    """

    beta0: float
    n_acc: float
    p_star: float
    hbar_eff: float
    delta: float
    beta_ini: float | None = None

    def __post_init__(self):
        for name in ("beta0", "n_acc", "p_star", "hbar_eff", "delta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be > 0, got {v}")

    @property
    def drift_rate(self) -> float:
        """d beta / dt = -beta0 / (pi n_acc)."""
        return -self.beta0 / (math.pi * self.n_acc)

    @property
    def force(self) -> float:
        """|F| with d beta / dt = -F / hbar_eff."""
        return self.hbar_eff * self.beta0 / (math.pi * self.n_acc)

    @property
    def h_rescaled(self) -> float:
        """h' = 4 hbar_eff p* F / delta^2."""
        return 4.0 * self.hbar_eff * self.p_star * self.force / self.delta ** 2

    @property
    def alpha(self) -> float:
        """Decay exponent: <p>_final = -p*(1 - 2 e^{-alpha n_acc})."""
        return (math.pi ** 2 * self.delta ** 2
                / (4.0 * self.beta0 * self.p_star * self.hbar_eff ** 2))

    @property
    def t_cross(self) -> float:
        """Time at which beta(t) = 0 for an atom starting at beta_ini."""
        b = self.beta0 if self.beta_ini is None else self.beta_ini
        return math.pi * self.n_acc * (b / self.beta0)


@dataclass(frozen=True)
class LZResult:
    stay_probability: float        # analytic e^{-pi/h'}
    ode_stay_probability: float
    times: np.ndarray              # rescaled times of the trace
    populations: np.ndarray        # |psi_2|^2 along the trace


def lz_transition(config: LZConfig, horizon: float = 50.0,
                  n_trace: int = 400) -> LZResult:
    """Analytic Landau-Zener stay probability plus an ODE-integrated trace.

    Integrates i h' d/dt' psi = [[t', 1], [1, -t']] psi from t' = -horizon
    with the initial condition on the adiabatic upper branch, and compares
    the final band-2 population with e^{-pi/h'}.
    """
    h = config.h_rescaled
    if h <= 0:
        raise ParameterDomainError(f"rescaled h must be > 0, got {h}")
    if horizon < 20:
        raise ConfigurationError("horizon must be >= 20 rescaled time units")
    analytic = math.exp(-math.pi / h)

    def rhs(t, y):
        psi = y[:2] + 1j * y[2:]
        dpsi = -1j / h * np.array([t * psi[0] + psi[1], psi[0] - t * psi[1]])
        return np.concatenate([dpsi.real, dpsi.imag])

    # adiabatic eigenvector of [[t,1],[1,-t]] at t = -horizon whose limit is
    # (0, 1): the eigenvalue branch sqrt(t^2+1) has v ~ (0,1) for t -> -inf
    t0 = -horizon
    lam = math.hypot(t0, 1.0)
    v = np.array([1.0, lam - t0])
    v /= np.linalg.norm(v)
    y0 = np.array([v[0], v[1], 0.0, 0.0])
    times = np.linspace(t0, horizon, n_trace)
    sol = scipy.integrate.solve_ivp(rhs, (t0, horizon), y0, method="DOP853",
                                    rtol=1e-10, atol=1e-12, t_eval=times)
    if not sol.success:
        raise NumericalError(f"Landau-Zener integration failed: {sol.message}")
    pops = sol.y[1] ** 2 + sol.y[3] ** 2
    # the bare band-2 population oscillates around its asymptote with a ~1/t
    # tail; projecting on the adiabatic eigenvector at +horizon removes it
    lam_f = math.hypot(horizon, 1.0)
    w = np.array([-(lam_f - horizon), 1.0])
    w /= np.linalg.norm(w)
    psi_f = sol.y[:2, -1] + 1j * sol.y[2:, -1]
    stay_ode = float(abs(np.dot(w, psi_f)) ** 2)
    return LZResult(stay_probability=analytic,
                    ode_stay_probability=stay_ode,
                    times=times, populations=pops)


@dataclass(frozen=True)
class LZFit:
    amplitude: float          # A in y = -A (1 - 2 e^{-B x})
    rate: float               # B
    extracted_delta: float
    residual: float           # RMS of the fit
    beta0: float
    hbar_eff: float

    def __post_init__(self):
        expected = math.sqrt(4.0 * self.beta0 * self.amplitude * self.rate
                             * self.hbar_eff ** 2 / math.pi ** 2)
        if not math.isclose(expected, self.extracted_delta,
                            rel_tol=1e-9, abs_tol=1e-300):
            raise ConfigurationError("extracted_delta inconsistent with (A, B)")


def delta_from_fit(amplitude: float, rate: float, beta0: float,
                   hbar_eff: float) -> float:
    """delta = sqrt(4 beta0 A B hbar_eff^2 / pi^2)."""
    return math.sqrt(4.0 * beta0 * amplitude * rate * hbar_eff ** 2
                     / math.pi ** 2)


def lz_fit(points, beta0: float, hbar_eff: float,
           max_restarts: int = 100) -> LZFit:
    """Fit <p>_final vs n_acc by y = -A (1 - 2 e^{-B x}) and extract delta.

    Damped least squares with multiple starts; B is seeded from the span of
    the data (the two smallest/largest n_acc) plus a geometric ladder.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ConfigurationError("need at least 4 (n_acc, p_final) points")
    x = pts[:, 0]
    y = pts[:, 1]
    if x.max() / x.min() < 10.0:
        raise ConfigurationError("n_acc values must span at least one decade")
    if np.ptp(y) < 1e-12 * max(1.0, np.max(np.abs(y))):
        raise FitFailureError("flat data leaves the rate unidentifiable",
                              best_residual=0.0)

    def model(params, xv):
        a, b = params
        return -a * (1.0 - 2.0 * np.exp(-np.clip(b * xv, -700.0, 700.0)))

    def resid(params):
        return model(params, x) - y

    a0 = max(abs(y).max(), 1e-6)
    # rate scale from the end points: fraction of the transition completed
    b_seeds = [1.0 / x.max(), 1.0 / math.sqrt(x.max() * x.min()), 1.0 / x.min()]
    b_seeds += list(np.geomspace(0.1 / x.max(), 10.0 / x.min(), 12))
    best = None
    tried = 0
    for b0 in b_seeds:
        if tried >= max_restarts:
            break
        tried += 1
        sol = scipy.optimize.least_squares(resid, x0=[a0, b0], method="lm",
                                           xtol=1e-14, ftol=1e-14)
        rms = math.sqrt(np.mean(sol.fun ** 2))
        if sol.x[0] > 0 and sol.x[1] > 0 and (best is None or rms < best[0]):
            best = (rms, sol.x)
    if best is None:
        raise FitFailureError(f"no converged fit after {tried} starts",
                              best_residual=None)
    rms, (a, b) = best
    # reject pathological fits that do not beat a constant model
    if rms > 0.99 * np.std(y) and np.std(y) > 0:
        raise FitFailureError("fit no better than a constant", best_residual=rms)
    return LZFit(amplitude=float(a), rate=float(b),
                 extracted_delta=delta_from_fit(a, b, beta0, hbar_eff),
                 residual=float(rms), beta0=beta0, hbar_eff=hbar_eff)
