"""The three experimental routes to chaos-assisted tunneling.

Route 1: momentum-space tunneling oscillations at fixed quasimomentum,
averaged over a finite quasimomentum distribution.  Route 2: accelerated
frame Landau-Zener runs drifting beta through the avoided crossing at zero,
with the splitting extracted from the final mean momentum and a four-part
acceptance analysis.  Route 3: spatial double-well oscillations under the
two-period map, plus the phase-space rotation readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classical import PhaseState, fold_angle
from .errors import ConfigurationError, ParameterDomainError, TaggingError
from .floquet import (SpatialGrid, SplittingSample, WaveFunction,
                      coherent_state_for, floquet_spectrum, propagator_matrix,
                      split_step_evolve, splitting)
from .twolevel import LZConfig, LZFit, lz_fit
from .units import ModelParams

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class QuasimomentumEnsemble:
    """Finite set of quasimomenta standing in for the atomic cloud's spread."""

    betas: tuple

    def __post_init__(self):
        for b in self.betas:
            if not (-0.5 <= b < 0.5):
                raise ParameterDomainError(f"beta {b} outside [-1/2, 1/2)")
        if len(self.betas) < 1:
            raise ParameterDomainError("ensemble needs at least one member")

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int, seed: int = 0):
        """n independent uniform draws on [lo, hi] with a fixed seed."""
        if not (-0.5 <= lo <= hi < 0.5):
            raise ParameterDomainError(f"interval [{lo}, {hi}] outside the zone")
        rng = np.random.default_rng(seed)
        return cls(tuple(rng.uniform(lo, hi, size=n)))

    @classmethod
    def grid(cls, lo: float, hi: float, n: int):
        return cls(tuple(np.linspace(lo, hi, n)))

    @classmethod
    def single(cls, beta: float):
        return cls((beta,))

    def __len__(self):
        return len(self.betas)


@dataclass
class ObservableTrace:
    """Stroboscopic record of <p> or <x>, averaged and optionally per member."""

    times: np.ndarray              # in drive periods
    values: np.ndarray             # ensemble-averaged observable
    members: np.ndarray | None = None   # (n_members, n_times)
    betas: tuple | None = None
    meta: dict = field(default_factory=dict)

    def dominant_period(self) -> float:
        """Period of the strongest Fourier component of the trace, in the
        same units as `times` (assumed uniformly spaced)."""
        v = self.values - np.mean(self.values)
        spec = np.abs(np.fft.rfft(v))
        freqs = np.fft.rfftfreq(len(v), d=self.times[1] - self.times[0])
        k = int(np.argmax(spec[1:])) + 1
        return 1.0 / freqs[k]


def tunneling_amplitude(trace: ObservableTrace, period: float,
                        band: float = 0.2) -> float:
    """Amplitude of the trace's Fourier component near the tunneling period.

    Separates the slow tunneling oscillation from the fast intra-island
    beats, which do not collapse under quasimomentum averaging.
    """
    v = trace.values - np.mean(trace.values)
    f = np.abs(np.fft.rfft(v))
    freqs = np.fft.rfftfreq(len(v), d=trace.times[1] - trace.times[0])
    sel = (freqs > (1.0 - band) / period) & (freqs < (1.0 + band) / period)
    if not np.any(sel):
        raise ConfigurationError("trace too short to resolve the period")
    return 2.0 * float(f[sel].max()) / len(v)


def _spectral_setup(params: ModelParams, psi0: WaveFunction,
                    steps_per_period: int, map_period: int,
                    weight_floor: float = 1e-10):
    """Eigen-expansion of psi0 in the Floquet basis, truncated to the
    components that carry weight."""
    grid = psi0.grid
    u = propagator_matrix(params, grid, steps_per_period, map_period)
    spec = floquet_spectrum(u, params, [], grid, map_period)
    vecs = np.stack([wf.amplitudes for wf in spec.states])
    c = (vecs.conj() @ psi0.amplitudes) * grid.dx
    keep = np.abs(c) ** 2 > weight_floor
    return spec.quasienergies[keep], c[keep], vecs[keep], spec


def _trace_from_expansion(energies, coeffs, vecs, grid: SpatialGrid,
                          params: ModelParams, times, observable: str,
                          map_period: int):
    """<p> or folded <x> at stroboscopic times from a truncated Floquet
    expansion; exact for the stroboscopic dynamics."""
    hbar = params.hbar_eff
    n = grid.n_points
    if observable == "p":
        cj = np.fft.fft(vecs, axis=-1) / n
        pvals = hbar * (np.fft.fftfreq(n, d=1.0 / n) + params.beta)
        op = TWO_PI * (cj.conj() * pvals) @ cj.T   # op[m, k] = <m|p|k>
    elif observable == "x":
        xf = fold_angle(TWO_PI * np.arange(n) / n)
        # zero out the branch-cut point x = pi so <x> is exactly odd under
        # the mirror x -> -x (see WaveFunction.expectation_x)
        xf[n // 2] = 0.0
        op = (vecs.conj() * xf) @ vecs.T * grid.dx
    else:
        raise ConfigurationError(f"unknown observable {observable!r}")
    # `times` counts applications of the map_period operator; each application
    # advances the phase by 2 pi E map_period / hbar
    phases = np.exp(-2j * np.pi * np.outer(times, energies)
                    * map_period / hbar)
    amp = phases * coeffs                          # (n_t, n_kept)
    vals = np.einsum("tm,mk,tk->t", amp.conj(), op, amp).real
    norm = (np.abs(amp) ** 2).sum(axis=1)
    return vals / norm


def route1_oscillations(params: ModelParams, ensemble: QuasimomentumEnsemble,
                        n_periods: int, center: PhaseState | None = None,
                        width_x: float | None = None,
                        grid: SpatialGrid | None = None,
                        steps_per_period: int = 256,
                        keep_members: bool = True) -> ObservableTrace:
    """Momentum-space tunneling oscillations from a coherent state at the
    upper island, per quasimomentum member and uniformly averaged."""
    if grid is None:
        grid = SpatialGrid(256)
    if center is None:
        center = PhaseState(0.0, 1.29724)
    if width_x is None:
        # experiment-style state of momentum width 1: width_x = hbar_eff / 2
        width_x = params.hbar_eff / 2.0
    times = np.arange(n_periods, dtype=float)
    members = np.empty((len(ensemble), n_periods))
    for i, b in enumerate(ensemble.betas):
        pb = params.with_beta(float(b))
        psi = coherent_state_for(center, width_x, pb, grid)
        energies, coeffs, vecs, _ = _spectral_setup(pb, psi, steps_per_period, 1)
        members[i] = _trace_from_expansion(energies, coeffs, vecs, grid, pb,
                                           times, "p", 1)
    return ObservableTrace(times=times, values=members.mean(axis=0),
                           members=members if keep_members else None,
                           betas=ensemble.betas,
                           meta={"center": (center.x, center.p),
                                 "width_x": width_x})


# --- route 2 -------------------------------------------------------------------

def _tagged_band_state(params: ModelParams, grid: SpatialGrid,
                       steps_per_period: int, center: PhaseState,
                       weight_threshold: float):
    """Best island-tagged Floquet eigenstate at the given beta, with the
    weight the island coherent state projects onto it."""
    u = propagator_matrix(params, grid, steps_per_period, 1)
    spec = floquet_spectrum(u, params, [center], grid, 1)
    k = int(np.argmax(spec.island_tags[:, 0]))
    weight = float(spec.island_tags[k, 0])
    flagged = weight < weight_threshold
    return spec.states[k], weight, flagged


def route2_drift_run(params: ModelParams, n_acc: float,
                     ensemble: QuasimomentumEnsemble | None = None,
                     beta0: float = 0.05, p_star: float = 1.29724,
                     grid: SpatialGrid | None = None,
                     steps_per_period: int = 128,
                     record_every: int | None = None,
                     weight_threshold: float = 0.9) -> ObservableTrace:
    """Accelerated-frame run: beta drifts by -2*beta0 over n_acc periods.

    Each member starts in the island-tagged band eigenstate at its
    beta_ini; all members evolve together under the batched split-step
    with per-member beta(t).
    """
    if grid is None:
        grid = SpatialGrid(128)
    if ensemble is None:
        ensemble = QuasimomentumEnsemble.uniform(0.04, 0.06, 20, seed=0)
    if record_every is None:
        record_every = max(1, int(n_acc) // 400)
    center = PhaseState(0.0, p_star)
    beta_ini = np.array(ensemble.betas)
    amps = np.empty((len(ensemble), grid.n_points), dtype=complex)
    weights = np.empty(len(ensemble))
    any_flagged = False
    for i, b in enumerate(beta_ini):
        psi, w, flagged = _tagged_band_state(params.with_beta(float(b)), grid,
                                             steps_per_period, center,
                                             weight_threshold)
        amps[i] = psi.amplitudes
        weights[i] = w
        any_flagged = any_flagged or flagged
    rate = beta0 / (math.pi * n_acc)      # |d beta / dt|

    def beta_fn(t):
        return beta_ini - rate * t

    n_steps_total = int(round(n_acc)) * steps_per_period
    dt = TWO_PI / steps_per_period
    n = grid.n_points
    jvals = np.fft.fftfreq(n, d=1.0 / n)
    rec_times = []
    rec_p = []
    t = 0.0
    period_idx = 0
    while period_idx < int(round(n_acc)):
        n_block = min(record_every, int(round(n_acc)) - period_idx)
        amps = split_step_evolve(amps, grid, params, t,
                                 n_block * steps_per_period, dt,
                                 beta_fn=beta_fn)
        t += n_block * TWO_PI
        period_idx += n_block
        cj = np.fft.fft(amps, axis=-1) / n
        prob = TWO_PI * np.abs(cj) ** 2
        beta_now = beta_fn(t)
        pvals = params.hbar_eff * (jvals[None, :] + beta_now[:, None])
        rec_times.append(float(period_idx))
        rec_p.append((prob * pvals).sum(axis=1) / prob.sum(axis=1))
    members = np.array(rec_p).T
    times = np.array(rec_times)
    # final momentum within the two-band (island doublet) subspace: project
    # each member onto the two island-tagged band eigenstates at its final
    # beta and renormalize, <p> = p* (P_up - P_dn) / (P_up + P_dn).  This is
    # the observable the two-level reduction describes; the raw trace also
    # carries the population left outside the doublet.
    beta_fin = beta_fn(t)
    centers = [PhaseState(0.0, p_star), PhaseState(0.0, -p_star)]
    p_two_band = np.empty(len(ensemble))
    for i, b in enumerate(beta_fin):
        pb = params.with_beta(float(b))
        u = propagator_matrix(pb, grid, steps_per_period, 1)
        spec = floquet_spectrum(u, pb, centers, grid, 1)
        k_up = int(np.argmax(spec.island_tags[:, 0]))
        k_dn = int(np.argmax(spec.island_tags[:, 1]))
        c_up = abs(np.vdot(spec.states[k_up].amplitudes, amps[i]) * grid.dx) ** 2
        c_dn = abs(np.vdot(spec.states[k_dn].amplitudes, amps[i]) * grid.dx) ** 2
        if c_up + c_dn > 0:
            p_two_band[i] = p_star * (c_up - c_dn) / (c_up + c_dn)
        else:
            p_two_band[i] = members[i, -1]
    return ObservableTrace(times=times, values=members.mean(axis=0),
                           members=members, betas=ensemble.betas,
                           meta={"n_acc": n_acc, "beta0": beta0,
                                 "p_star": p_star,
                                 "p_final_two_band":
                                     float(p_two_band.mean()),
                                 "p_final_two_band_members":
                                     p_two_band.tolist(),
                                 "projection_weights": weights.tolist(),
                                 "projection_flagged": any_flagged,
                                 "t_cross_periods":
                                     float(np.mean(beta_ini)) / (2.0 * beta0)
                                     * n_acc})


@dataclass(frozen=True)
class CriteriaReport:
    """Four-part screen for trusting a Landau-Zener splitting extraction."""

    final_value_ok: bool
    crossing_ok: bool
    curvature_ok: bool
    amplitude_ok: bool
    thresholds: dict
    details: dict

    @property
    def accepted(self) -> bool:
        return (self.final_value_ok and self.crossing_ok
                and self.curvature_ok and self.amplitude_ok)


# Tightened thresholds for unattended splitting surveys. The default
# kappa values admit the textbook demonstration cases but, over a broad
# hbar_eff sweep, also accept runs where part of the packet transfers at a
# spurious avoided crossing away from beta = 0 and the extracted splitting
# is off by a factor of a few. Requiring a nearly complete transfer
# (kappa1 = 0.7) that is nearly fully localized at the crossing
# (kappa2 = 0.9) keeps only extractions reliable to ~20%, at the price of
# rejecting the large majority of sweep points.
CRITERIA_SURVEY = {"kappa1": 0.7, "kappa2": 0.9}


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or window >= len(values):
        return values
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.pad(values, pad, mode="edge")
    return np.convolve(padded, kernel, mode="valid")[:len(values)]


def evaluate_criteria(trace: ObservableTrace, p_star: float,
                      kappa1: float = 0.5, kappa2: float = 0.5,
                      kappa4: float = 0.2, beta_window: float = 0.01,
                      smooth_window: int = 21) -> CriteriaReport:
    """Apply the four acceptance criteria to the slowest drift-run trace.

    (1) the final mean momentum must have dropped below -kappa1*p_star;
    (2) at least kappa2 of the total change happens within +-beta_window
    (in quasimomentum) of the crossing time; (3) the locally smoothed trace
    is convex at the crossing; (4) the overall variation is at least
    kappa4*p_star.
    """
    t = trace.times
    p = trace.values
    n_acc = trace.meta["n_acc"]
    beta0 = trace.meta["beta0"]
    t_cross = trace.meta.get("t_cross_periods", n_acc)
    final_ok = bool(p[-1] <= -kappa1 * p_star)

    total_change = p[-1] - p[0]
    half_window = beta_window * n_acc / (2.0 * beta0)   # periods per unit beta
    in_win = (t >= t_cross - half_window) & (t <= t_cross + half_window)
    if in_win.sum() >= 2 and abs(total_change) > 0:
        win_change = p[in_win][-1] - p[in_win][0]
        crossing_frac = win_change / total_change
    else:
        crossing_frac = 0.0
    crossing_ok = bool(crossing_frac >= kappa2)

    # third criterion: a local quadratic fit of the smoothed derivative
    # around t_cross must show the expected convex dip (fastest drop centered
    # on the crossing); a drop displaced from t_cross signals tunneling at a
    # spurious avoided crossing away from beta = 0
    sm = _smooth(p, smooth_window)
    deriv = _smooth(np.gradient(sm, t), smooth_window)
    fit_win = (t >= t_cross - 2 * half_window) & (t <= t_cross + 2 * half_window)
    drop_offset = float(t[np.argmin(deriv)] - t_cross)
    if fit_win.sum() >= 5:
        coeff = np.polyfit(t[fit_win] - t_cross, deriv[fit_win], 2)
        curvature = 2.0 * coeff[0]
    else:
        curvature = 0.0
    curvature_ok = bool(curvature > 0 and abs(drop_offset) <= 2 * half_window)

    variation = float(np.max(p) - np.min(p))
    amplitude_ok = bool(variation >= kappa4 * p_star)

    return CriteriaReport(
        final_value_ok=final_ok, crossing_ok=crossing_ok,
        curvature_ok=curvature_ok, amplitude_ok=amplitude_ok,
        thresholds={"kappa1": kappa1, "kappa2": kappa2, "kappa4": kappa4,
                    "beta_window": beta_window, "smooth_window": smooth_window},
        details={"final_value": float(p[-1]), "crossing_fraction":
                 float(crossing_frac), "curvature": float(curvature),
                 "drop_offset": drop_offset, "variation": variation})


# standard traveling-time schedules for the drift-run fit
NACC_PRESET_COARSE = (100, 280, 665, 1547, 5649)
NACC_PRESET_FINE = (100, 211, 404, 701, 1216, 2330, 6528)


def route2_extract(params: ModelParams, n_acc_schedule=None,
                   ensemble: QuasimomentumEnsemble | None = None,
                   beta0: float = 0.05, p_star: float = 1.29724,
                   grid: SpatialGrid | None = None,
                   steps_per_period: int = 128,
                   criteria_kwargs: dict | None = None):
    """Full route-2 pipeline: drift runs over a traveling-time schedule,
    Landau-Zener fit of the final momenta, and the four-criteria report
    evaluated on the slowest run.

    Returns (LZFit, CriteriaReport, points, slowest_trace).
    """
    if n_acc_schedule is None:
        n_acc_schedule = NACC_PRESET_FINE
    if len(n_acc_schedule) < 4:
        raise ConfigurationError("schedule needs at least 4 traveling times")
    points = []
    slowest_trace = None
    for n_acc in sorted(n_acc_schedule):
        tr = route2_drift_run(params, n_acc, ensemble=ensemble, beta0=beta0,
                              p_star=p_star, grid=grid,
                              steps_per_period=steps_per_period)
        points.append((float(n_acc),
                       float(tr.meta.get("p_final_two_band", tr.values[-1]))))
        slowest_trace = tr
    fit = lz_fit(points, beta0, params.hbar_eff)
    report = evaluate_criteria(slowest_trace, p_star,
                               **(criteria_kwargs or {}))
    sample = SplittingSample(hbar_eff=params.hbar_eff, beta=0.0,
                             delta=fit.extracted_delta,
                             island_kind="momentum-pair", method="lz")
    return fit, report, points, slowest_trace, sample


# --- route 3 -------------------------------------------------------------------

def route3_oscillations(params: ModelParams, ensemble: QuasimomentumEnsemble,
                        n_double_periods: int,
                        center: PhaseState | None = None,
                        width_x: float = TWO_PI / 10.0,
                        grid: SpatialGrid | None = None,
                        steps_per_period: int = 256,
                        keep_members: bool = False) -> ObservableTrace:
    """Spatial double-well oscillations of <x> under the two-period map."""
    if grid is None:
        grid = SpatialGrid(256)
    if center is None:
        center = PhaseState(1.2, 0.0)
    times = 2.0 * np.arange(n_double_periods, dtype=float)
    members = np.empty((len(ensemble), n_double_periods))
    for i, b in enumerate(ensemble.betas):
        pb = params.with_beta(float(b))
        psi = coherent_state_for(center, width_x, pb, grid)
        energies, coeffs, vecs, _ = _spectral_setup(pb, psi, steps_per_period, 2)
        members[i] = _trace_from_expansion(energies, coeffs, vecs, grid, pb,
                                           times / 2.0, "x", 2)
    return ObservableTrace(times=times, values=members.mean(axis=0),
                           members=members if keep_members else None,
                           betas=ensemble.betas,
                           meta={"center": (center.x, center.p),
                                 "width_x": width_x})


def route3_splitting_scan(params: ModelParams, islands,
                          hbar_values=None, beta_values=None,
                          grid: SpatialGrid | None = None,
                          steps_per_period: int = 256):
    """Exact two-period splittings along a sweep in hbar_eff or beta.

    Tagging failures leave a None in the output list instead of aborting.
    """
    if (hbar_values is None) == (beta_values is None):
        raise ConfigurationError("sweep exactly one of hbar_values, beta_values")
    out = []
    sweep = hbar_values if hbar_values is not None else beta_values
    for v in sweep:
        p = (params.with_hbar(float(v)) if hbar_values is not None
             else params.with_beta(float(v)))
        try:
            out.append(splitting(p, islands, map_period=2, grid=grid,
                                 steps_per_period=steps_per_period,
                                 island_kind="spatial-pair"))
        except TaggingError:
            out.append(None)
    return out


# --- phase-space rotation readout ---------------------------------------------

@dataclass(frozen=True)
class RotationScan:
    phase_shifts: tuple
    zero_velocity_population: tuple

    def __post_init__(self):
        for p in self.zero_velocity_population:
            if not (0.0 <= p <= 1.0 + 1e-9):
                raise ConfigurationError(f"population {p} outside [0, 1]")


def phase_rotation_measurement(psi: WaveFunction, params: ModelParams,
                               phase_shifts, steps_per_period: int = 256) -> RotationScan:
    """Lattice-shift-and-rotate readout of sub-wavelength spatial structure.

    For each shift phi: translate the state by -phi, evolve in the static
    lattice (modulation off) for a quarter of the harmonic period at the
    well bottom, duration (pi/2)/sqrt(gamma), and report the momentum-space
    population of the zero-velocity class |p| < hbar_eff/2.
    """
    if params.gamma <= 0:
        raise ParameterDomainError("static readout needs gamma > 0")
    static = ModelParams(params.gamma, 0.0, params.hbar_eff, psi.beta)
    grid = psi.grid
    n = grid.n_points
    j = np.fft.fftfreq(n, d=1.0 / n)
    duration = (math.pi / 2.0) / math.sqrt(params.gamma)
    n_steps = max(64, int(math.ceil(duration / (TWO_PI / steps_per_period))))
    dt = duration / n_steps
    c0 = np.fft.fft(psi.amplitudes) / n
    pops = []
    for phi in phase_shifts:
        shifted = np.fft.ifft(c0 * np.exp(-1j * j * phi)) * n
        out = split_step_evolve(shifted, grid, static, 0.0, n_steps, dt)
        cj = np.fft.fft(out, axis=-1) / n
        prob = TWO_PI * np.abs(cj) ** 2
        total = prob.sum()
        zero_class = np.abs(j + psi.beta) < 0.5
        pops.append(float(prob[zero_class].sum() / total))
    return RotationScan(phase_shifts=tuple(float(p) for p in phase_shifts),
                        zero_velocity_population=tuple(pops))
