"""Floquet-Bloch quantum layer for the modulated pendulum.

The wave function lives on one spatial period [0, 2*pi) with quasimomentum
beta; the momentum operator is hbar_eff*(j + beta) on plane waves e^{i j x}.
One-period propagation uses a midpoint split-step Fourier scheme, which also
handles a time-dependent beta(t) for accelerated-frame runs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .classical import PhaseState, fold_angle
from .errors import (ConfigurationError, IllLocalizedError, NumericalError,
                     TaggingError)
from .units import ModelParams

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpatialGrid:
    """Equally spaced grid over one spatial period [0, 2*pi)."""

    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 64 or (n & (n - 1)) != 0:
            raise ConfigurationError(f"n_points must be a power of two >= 64, got {n}")

    @property
    def positions(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_points) / self.n_points

    @property
    def momentum_indices(self) -> np.ndarray:
        """FFT-ordered integers j in [-n/2, n/2)."""
        n = self.n_points
        return np.fft.fftfreq(n, d=1.0 / n).astype(int)

    @property
    def dx(self) -> float:
        return TWO_PI / self.n_points


@dataclass
class WaveFunction:
    amplitudes: np.ndarray      # complex, shape (n_points,)
    beta: float
    grid: SpatialGrid

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx))

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.amplitudes / self.norm(), self.beta, self.grid)

    def momentum_coefficients(self) -> np.ndarray:
        """Coefficients c_j of e^{i j x}; sum 2*pi*|c_j|^2 = ||psi||^2."""
        return np.fft.fft(self.amplitudes) / self.grid.n_points

    def momentum_probabilities(self) -> np.ndarray:
        c = self.momentum_coefficients()
        return TWO_PI * np.abs(c) ** 2

    def momentum_values(self, hbar_eff: float) -> np.ndarray:
        return hbar_eff * (self.grid.momentum_indices + self.beta)

    def expectation_p(self, hbar_eff: float) -> float:
        return float(np.sum(self.momentum_probabilities()
                            * self.momentum_values(hbar_eff)))

    def expectation_x(self) -> float:
        x = fold_angle(self.grid.positions)
        # the grid point at x = pi sits on the fold's branch cut (+pi and
        # -pi are the same point); give it the symmetric mean, zero, so that
        # <x> is exactly odd under the mirror x -> -x
        x[self.grid.n_points // 2] = 0.0
        return float(np.sum(x * np.abs(self.amplitudes) ** 2) * self.grid.dx)

    def overlap(self, other: "WaveFunction") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)


def coherent_state(center: PhaseState, width_x: float, beta: float,
                   grid: SpatialGrid, hbar_eff: float) -> WaveFunction:
    """Minimum-uncertainty Gaussian at `center`, periodized over the cell.

    width_x is the position standard deviation; the momentum width is
    hbar_eff/(2*width_x).  hbar_eff fixes the plane-wave factor that puts
    <p> at center.p.
    """
    params = ModelParams(gamma=0.0, epsilon=0.0, hbar_eff=hbar_eff, beta=beta)
    return coherent_state_for(center, width_x, params, grid)


def coherent_state_for(center: PhaseState, width_x: float, params: ModelParams,
                       grid: SpatialGrid) -> WaveFunction:
    """Coherent state with Delta_x = width_x, Delta_p = hbar_eff/(2 width_x)."""
    if width_x <= 0:
        raise ConfigurationError("width_x must be positive")
    if width_x >= math.pi:
        raise IllLocalizedError(
            f"width_x = {width_x} does not fit inside half the spatial period")
    x = TWO_PI * np.arange(grid.n_points) / grid.n_points
    k_local = center.p / params.hbar_eff - params.beta   # phase winding of the cell function
    psi = np.zeros(grid.n_points, dtype=complex)
    for m in range(-4, 5):
        y = x + TWO_PI * m - center.x
        psi += np.exp(-y ** 2 / (4.0 * width_x ** 2) + 1j * k_local * y)
    wf = WaveFunction(psi, params.beta, grid)
    return wf.normalized()


# --- split-step propagation ---------------------------------------------------

def split_step_evolve(amplitudes: np.ndarray, grid: SpatialGrid,
                      params: ModelParams, t0: float, n_steps: int, dt: float,
                      beta_fn=None):
    """Midpoint split-step: half kinetic, full potential, half kinetic.

    `amplitudes` has shape (..., n_points) and is evolved along the last axis.
    `beta_fn(t)` may return a scalar or an array broadcastable against the
    batch; when None the params' beta is used throughout.
    """
    n = grid.n_points
    j = np.fft.fftfreq(n, d=1.0 / n)          # float copy of momentum indices
    x = TWO_PI * np.arange(n) / n
    hbar = params.hbar_eff
    cosx = np.cos(x)
    psi = np.asarray(amplitudes, dtype=complex)
    for k in range(n_steps):
        tm = t0 + (k + 0.5) * dt
        beta = params.beta if beta_fn is None else beta_fn(tm)
        beta = np.asarray(beta)[..., None] if np.ndim(beta) else beta
        kin = np.exp(-0.25j * dt * hbar * (j + beta) ** 2)
        pot = np.exp(1j * dt * params.gamma
                     * (1.0 + params.epsilon * math.cos(tm)) * cosx / hbar)
        psi = np.fft.ifft(kin * np.fft.fft(psi, axis=-1), axis=-1)
        psi *= pot
        psi = np.fft.ifft(kin * np.fft.fft(psi, axis=-1), axis=-1)
    return psi


def evolve_period(psi: WaveFunction, params: ModelParams,
                  steps_per_period: int = 256, beta_schedule=None,
                  n_periods: int = 1, t0: float = 0.0) -> WaveFunction:
    """Evolve a wave function by n_periods drive periods."""
    if steps_per_period < 64:
        raise ConfigurationError("steps_per_period must be >= 64")
    dt = TWO_PI / steps_per_period
    use_params = params if beta_schedule is not None else params.with_beta(psi.beta)
    amps = split_step_evolve(psi.amplitudes, psi.grid, use_params, t0,
                             n_periods * steps_per_period, dt,
                             beta_fn=beta_schedule)
    beta = psi.beta if beta_schedule is None else float(
        np.asarray(beta_schedule(t0 + n_periods * TWO_PI)))
    return WaveFunction(amps, beta, psi.grid)


def propagator_matrix(params: ModelParams, grid: SpatialGrid,
                      steps_per_period: int = 256, map_period: int = 1) -> np.ndarray:
    """One- or two-period propagator in the plane-wave basis (FFT ordering)."""
    if steps_per_period < 64:
        raise ConfigurationError("steps_per_period must be >= 64")
    n = grid.n_points
    dt = TWO_PI / steps_per_period
    # columns: each basis plane wave, built by inverse FFT of the identity
    psi0 = np.fft.ifft(np.eye(n), axis=-1) * n   # row k = plane wave e^{i j_k x}
    psi1 = split_step_evolve(psi0, grid, params, 0.0,
                             map_period * steps_per_period, dt)
    u = np.fft.fft(psi1, axis=-1).T / n          # U[j', j] in momentum basis
    return u


def unitarity_defect(u: np.ndarray) -> float:
    n = u.shape[0]
    return float(np.max(np.abs(u.conj().T @ u - np.eye(n))))


# --- spectra -------------------------------------------------------------------

@dataclass
class FloquetSpectrum:
    quasienergies: np.ndarray      # in [0, hbar_eff / map_period)
    states: list                   # WaveFunction per eigenstate
    island_tags: np.ndarray        # shape (n_states, n_islands)
    parity_x: np.ndarray           # <psi|Pi_x|psi>, real part
    parity_p: np.ndarray | None    # only meaningful at beta = 0
    hbar_eff: float
    map_period: int

    @property
    def zone_width(self) -> float:
        return self.hbar_eff / self.map_period


def _parity_x_matrix_element(vec_momentum: np.ndarray) -> float:
    """<psi|Pi_x|psi> with Pi_x: j -> -j in the plane-wave basis."""
    n = len(vec_momentum)
    flipped = np.roll(vec_momentum[::-1], 1)   # maps index j to -j (mod n)
    return float(np.real(np.vdot(vec_momentum, flipped)))


def _parity_p_matrix_element(vec_momentum: np.ndarray) -> float:
    """Time-reversal reality label, the p -> -p operation at beta = 0.

    A unitary p -> -p (with x fixed) does not exist; the operation is the
    antiunitary K: c_j -> conj(c_{-j}).  After gauging the overall phase so
    the dominant component is real positive, Re<psi|K psi> is +-1 for states
    with a definite reality structure.
    """
    v = np.asarray(vec_momentum)
    v = v / np.linalg.norm(v)
    phase = v[np.argmax(np.abs(v))]
    v = v * (abs(phase) / phase)
    kv = np.conj(np.roll(v[::-1], 1))
    return float(np.real(np.vdot(v, kv)))


def _parity_blocks(n: int):
    """Orthonormal even/odd combinations of FFT-ordered plane waves.

    Pi_x maps basis index k to (-k) mod n; j = 0 and j = -n/2 are their own
    partners and belong to the even block.
    """
    even = []
    odd = []
    s = 1.0 / math.sqrt(2.0)
    for k in range(n):
        partner = (-k) % n
        if partner == k:
            col = np.zeros(n)
            col[k] = 1.0
            even.append(col)
        elif k < partner:
            plus = np.zeros(n)
            plus[k] = plus[partner] = s
            minus = np.zeros(n)
            minus[k], minus[partner] = s, -s
            even.append(plus)
            odd.append(minus)
    return np.stack(even, axis=1), np.stack(odd, axis=1)


def _eig_with_parity(u: np.ndarray):
    """Eigen-decomposition in the parity-adapted basis (beta = 0 only).

    Near-degenerate Floquet pairs otherwise come out of a plain eig as
    arbitrary mixtures of the two parity sectors.
    """
    n = u.shape[0]
    s_even, s_odd = _parity_blocks(n)
    evals = []
    evecs = []
    parity = []
    for block, sign in ((s_even, 1.0), (s_odd, -1.0)):
        ub = block.T @ u @ block
        w, v = scipy.linalg.eig(ub)
        evals.append(w)
        evecs.append(block @ v)
        parity.append(np.full(len(w), sign))
    return (np.concatenate(evals), np.concatenate(evecs, axis=1),
            np.concatenate(parity))


def floquet_spectrum(u: np.ndarray, params: ModelParams, islands,
                     grid: SpatialGrid, map_period: int = 1,
                     tag_width: float | None = None) -> FloquetSpectrum:
    """Eigen-decompose a propagator and tag states by island support.

    islands: iterable of IslandInfo (or PhaseState centers); the tag of a
    state for island i is |<coherent at center_i | psi>|^2 with an isotropic
    coherent state (Delta_x = Delta_p = sqrt(hbar_eff/2)).
    """
    at_symmetric_beta = abs(params.beta) < 1e-12
    try:
        if at_symmetric_beta:
            evals, evecs, parity_x = _eig_with_parity(u)
        else:
            evals, evecs = scipy.linalg.eig(u)
            parity_x = None
    except NumericalError:
        raise
    except Exception as exc:  # pragma: no cover - scipy failure is exotic
        raise NumericalError(f"eigendecomposition failed: cond issue ({exc})")
    if np.max(np.abs(np.abs(evals) - 1.0)) > 1e-6:
        raise NumericalError("propagator eigenvalues far from the unit circle; "
                             f"max defect {np.max(np.abs(np.abs(evals) - 1.0)):.2e}")
    hbar = params.hbar_eff
    zone = hbar / map_period
    quasi = (-hbar * np.angle(evals) / (TWO_PI * map_period)) % zone
    n = grid.n_points
    states = []
    if parity_x is None:
        parity_x = np.empty(len(evals))
    for k in range(len(evals)):
        vec = evecs[:, k]
        if not at_symmetric_beta:
            parity_x[k] = _parity_x_matrix_element(vec / np.linalg.norm(vec))
        pos = np.fft.ifft(vec) * n
        wf = WaveFunction(pos, params.beta, grid).normalized()
        states.append(wf)
    centers = [getattr(isl, "center", isl) for isl in islands]
    if tag_width is None:
        tag_width = math.sqrt(hbar / 2.0)
    tags = np.zeros((len(evals), len(centers)))
    for i, c in enumerate(centers):
        coh = coherent_state_for(c, tag_width, params, grid)
        for k, wf in enumerate(states):
            tags[k, i] = abs(coh.overlap(wf)) ** 2
    parity_p = None
    if at_symmetric_beta:
        parity_p = np.array([_parity_p_matrix_element(evecs[:, k])
                             for k in range(len(evals))])
    order = np.argsort(quasi)
    return FloquetSpectrum(
        quasienergies=quasi[order],
        states=[states[k] for k in order],
        island_tags=tags[order],
        parity_x=parity_x[order],
        parity_p=parity_p[order] if parity_p is not None else None,
        hbar_eff=hbar,
        map_period=map_period,
    )


def circular_distance(e1: float, e2: float, zone: float) -> float:
    d = abs(e1 - e2) % zone
    return min(d, zone - d)


@dataclass(frozen=True)
class SplittingSample:
    hbar_eff: float
    beta: float
    delta: float
    island_kind: str        # "momentum-pair" | "spatial-pair"
    method: str             # "exact" | "lz"

    def __post_init__(self):
        if self.delta < 0 or self.delta > self.hbar_eff / 2 + 1e-15:
            raise ConfigurationError(
                f"delta {self.delta} outside [0, hbar_eff/2] zone bound")


def doublet_states(spectrum: FloquetSpectrum, tag_threshold: float = 0.2):
    """Indices of the two states best supported by the island pair.

    The pair tag of a state is the sum of its tags over the two centers.
    """
    pair_tag = spectrum.island_tags.sum(axis=1)
    order = np.argsort(pair_tag)[::-1]
    best = order[:2]
    if len(best) < 2 or pair_tag[best[1]] < tag_threshold:
        raise TaggingError(
            f"fewer than two island-tagged states (best tags "
            f"{pair_tag[order[:4]].round(3)})",
            best_tags=pair_tag[order[:4]].tolist())
    return int(best[0]), int(best[1])


def splitting(params: ModelParams, islands, map_period: int = 1,
              grid: SpatialGrid | None = None, steps_per_period: int = 256,
              tag_threshold: float = 0.2, auto_refine: bool = True,
              island_kind: str | None = None) -> SplittingSample:
    """Exact quasienergy splitting of the island doublet.

    When the splitting comes out below 1e-5 the grid and step count are
    doubled once (resolution guard) unless auto_refine is off.
    """
    if grid is None:
        grid = SpatialGrid(256)
    u = propagator_matrix(params, grid, steps_per_period, map_period)
    spec = floquet_spectrum(u, params, islands, grid, map_period)
    i1, i2 = doublet_states(spec, tag_threshold)
    # report delta as the eigenphase difference of the map operator in the
    # one-period energy normalization, so the tunneling time in drive
    # periods is map_period * hbar_eff / delta for any map_period
    delta = map_period * circular_distance(
        spec.quasienergies[i1], spec.quasienergies[i2], spec.zone_width)
    if island_kind is None:
        centers = [getattr(isl, "center", isl) for isl in islands]
        island_kind = ("spatial-pair"
                       if abs(centers[0].p) < abs(centers[0].x) else "momentum-pair")
    if auto_refine and delta < 1e-5 and grid.n_points < 512:
        return splitting(params, islands, map_period,
                         SpatialGrid(grid.n_points * 2), steps_per_period * 2,
                         tag_threshold, auto_refine=False,
                         island_kind=island_kind)
    return SplittingSample(hbar_eff=params.hbar_eff, beta=params.beta,
                           delta=float(delta), island_kind=island_kind,
                           method="exact")


# --- band diagram --------------------------------------------------------------

@dataclass
class BandDiagram:
    beta_grid: np.ndarray
    energies: np.ndarray          # (n_beta, n_states) sorted quasienergies
    pair_tags: np.ndarray         # (n_beta, n_states) island-pair tag
    tags: np.ndarray              # (n_beta, n_states, n_islands)
    branch_energies: np.ndarray   # (n_beta, 2) followed island branches
    branch_flags: np.ndarray      # (n_beta,) True where continuation was ambiguous


def band_diagram(params: ModelParams, beta_grid, islands,
                 grid: SpatialGrid | None = None, steps_per_period: int = 256,
                 map_period: int = 1, overlap_threshold: float = 0.5) -> BandDiagram:
    """Quasienergy bands over a beta grid with island-branch continuation.

    The two island-tagged branches are followed in beta by maximal
    eigenvector overlap; ambiguous continuations (overlap below threshold)
    are flagged, not silently patched.
    """
    if grid is None:
        grid = SpatialGrid(256)
    betas = np.asarray(beta_grid, dtype=float)
    if np.any(betas < -0.5) or np.any(betas >= 0.5):
        raise ConfigurationError("beta_grid must lie within [-1/2, 1/2)")
    n = grid.n_points
    energies = np.empty((len(betas), n))
    pair_tags = np.empty((len(betas), n))
    all_tags = None
    branch_e = np.empty((len(betas), 2))
    flags = np.zeros(len(betas), dtype=bool)
    prev_vecs = None
    for i, b in enumerate(betas):
        p = params.with_beta(float(b))
        u = propagator_matrix(p, grid, steps_per_period, map_period)
        spec = floquet_spectrum(u, p, islands, grid, map_period)
        energies[i] = spec.quasienergies
        pt = spec.island_tags.sum(axis=1)
        pair_tags[i] = pt
        if all_tags is None:
            all_tags = np.empty((len(betas), n, spec.island_tags.shape[1]))
        all_tags[i] = spec.island_tags
        vecs = np.stack([wf.amplitudes for wf in spec.states])
        if prev_vecs is None:
            idx = np.argsort(pt)[::-1][:2]
        else:
            idx = []
            overlap = np.abs(vecs.conj() @ prev_vecs[list(prev_idx)].T) * grid.dx
            for col in range(2):
                k = int(np.argmax(overlap[:, col]))
                if overlap[k, col] < overlap_threshold:
                    flags[i] = True
                    k = int(np.argsort(pt)[::-1][col])
                idx.append(k)
        branch_e[i] = energies[i][list(idx)]
        prev_vecs, prev_idx = vecs, list(idx)
    return BandDiagram(betas, energies, pair_tags, all_tags, branch_e, flags)


# --- Husimi --------------------------------------------------------------------

def husimi(psi: WaveFunction, x_grid, p_grid, hbar_eff: float,
           width_x: float | None = None) -> np.ndarray:
    """Husimi distribution |<coherent(x,p)|psi>|^2 on a phase-space grid.

    Normalized with the measure dx dp / (2 pi hbar_eff), so the full
    phase-space integral is 1.
    """
    if width_x is None:
        width_x = math.sqrt(hbar_eff / 2.0)
    params = ModelParams(0.0, 0.0, hbar_eff, psi.beta)
    xg = np.asarray(x_grid, dtype=float)
    pg = np.asarray(p_grid, dtype=float)
    out = np.empty((len(xg), len(pg)))
    for i, xc in enumerate(xg):
        for k, pc in enumerate(pg):
            coh = coherent_state_for(PhaseState(xc, pc), width_x, params,
                                     psi.grid)
            out[i, k] = abs(coh.overlap(psi)) ** 2
    return out / (TWO_PI * hbar_eff)


# --- binary state snapshots ----------------------------------------------------

SNAPSHOT_MAGIC = b"CHTN"
SNAPSHOT_VERSION = 1
_HEADER_FULL = struct.Struct("<4sIId12x")   # magic, version, n_points, beta, pad


def save_state(path, psi: WaveFunction):
    """Write a wave function snapshot: 32-byte header + interleaved complex128."""
    with open(path, "wb") as fh:
        fh.write(_HEADER_FULL.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
                                   psi.grid.n_points, psi.beta))
        fh.write(np.ascontiguousarray(psi.amplitudes,
                                      dtype="<c16").tobytes())


def load_state(path) -> WaveFunction:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_FULL.size)
        magic, version, n_points, beta = _HEADER_FULL.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise ConfigurationError(f"bad snapshot magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise ConfigurationError(f"unsupported snapshot version {version}")
        data = np.frombuffer(fh.read(), dtype="<c16")
    if len(data) != n_points:
        raise ConfigurationError("snapshot payload length mismatch")
    return WaveFunction(data.astype(complex), beta, SpatialGrid(n_points))
