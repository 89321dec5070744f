"""Independent numerical checks of the closed-form bright-mode spectrum.

Two routes, deliberately sharing no code with :mod:`optospec.spectra`:

* :func:`frequency_domain_psd` solves the Fourier-space Langevin system in
  the doubled ladder basis at every frequency and contracts the transfer
  vector with the input-noise correlation matrix. With the normally ordered
  (non-symmetrised) vacuum it reproduces the asymmetric quantum spectrum.
* :func:`simulate_trajectory` integrates the c-number version of the same
  linear equations with symmetrised noise using the exact discrete-time
  propagator, and :func:`welch_psd` estimates its spectrum. A classical
  simulation can only ever match the symmetrised spectrum.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy import linalg, signal

from .dynamics import STATE_LABELS, UnstableSystemError, build_drift, eigenmodes, is_stable
from .model import SystemParams, check_grid, derive_couplings
from .spectra import Spectrum

RNG_ALGORITHM = "numpy Philox4x64-10"

# ---------------------------------------------------------------------------
# frequency-domain operator solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Spectral densities of the inputs ``(a_in, a_in^dag, b_x, b_x^dag, b_y, b_y^dag)``.

    ``matrix()[k, l]`` is the density of ``<n_k n_l>``.
    """

    ordering: str = "nonsymmetrized"

    def __post_init__(self):
        if self.ordering not in ("nonsymmetrized", "symmetrized"):
            raise ValueError(f"unknown ordering {self.ordering!r}")

    def matrix(self) -> np.ndarray:
        n = np.zeros((6, 6))
        if self.ordering == "nonsymmetrized":
            n[0, 1] = 1.0  # <a a^dag>
            n[1, 0] = 0.0  # <a^dag a>
        else:
            n[0, 1] = n[1, 0] = 0.5
        for q in (2, 4):
            n[q, q + 1] = n[q + 1, q] = 1.0
        return n


def _langevin_matrix(p: SystemParams) -> np.ndarray:
    """Coefficient matrix M of d/dt v = M v + B n in the doubled ladder basis."""
    c = derive_couplings(p)
    m = np.zeros((6, 6), dtype=complex)
    m[0, 0] = 1j * p.delta - p.kappa / 2
    m[1, 1] = np.conj(m[0, 0])
    for q, big_omega, gamma, g in ((2, p.omega_x, p.gamma_x, c.g_x), (4, p.omega_y, p.gamma_y, c.g_y)):
        m[q, q] = -1j * big_omega - gamma / 2
        m[q + 1, q + 1] = np.conj(m[q, q])
        # cavity driven by i g (b + b^dag); its conjugate row by -i g (b + b^dag)
        m[0, q : q + 2] = 1j * g
        m[1, q : q + 2] = -1j * g
        # mechanics driven by i g (a + a^dag)
        m[q, 0:2] = 1j * g
        m[q + 1, 0:2] = -1j * g
    return m


def _transfer_rows(p: SystemParams, omega: np.ndarray):
    """Row vectors t(omega) with x_b(omega) = t(omega) . n(omega).

    Fourier convention O(omega) = int O(t) exp(+i omega t) dt, so d/dt -> -i omega.
    Returns ``(t, singular)`` where ``singular`` flags frequencies at which the
    system matrix could not be inverted.
    """
    c = derive_couplings(p)
    m = _langevin_matrix(p)
    b = np.sqrt([p.kappa, p.kappa, p.Gamma_x, p.Gamma_x, p.Gamma_y, p.Gamma_y])
    proj = np.array([0, 0, c.u_x, c.u_x, c.u_y, c.u_y], dtype=complex)

    # L(omega) v = B n with L = -i omega I - M;  t = proj L^{-1} B  <=>  L^T y = proj
    lt = (-1j * omega[:, None, None] * np.eye(6) - m[None, :, :]).transpose(0, 2, 1)
    rhs = np.broadcast_to(proj, (omega.size, 6))[..., None]
    singular = np.zeros(omega.size, dtype=bool)
    try:
        y = np.linalg.solve(lt, rhs)[..., 0]
    except np.linalg.LinAlgError:
        y = np.zeros((omega.size, 6), dtype=complex)
        for i in range(omega.size):
            try:
                y[i] = np.linalg.solve(lt[i], proj)
            except np.linalg.LinAlgError:
                singular[i] = True
    return y * b, singular


def frequency_domain_psd(
    p: SystemParams, grid, noise: NoiseModel = NoiseModel()
) -> Spectrum:
    """Bright-mode PSD by direct inversion of the Fourier-space Langevin system.

    ``S(omega)`` is defined through ``<x_b(-omega) x_b(omega')> = 2 pi
    delta(omega - omega') S(omega)``, the ordering in which the cavity vacuum
    feeds the Stokes branch.
    """
    omega = check_grid(grid)
    t_pos, sing_pos = _transfer_rows(p, omega)
    t_neg, sing_neg = _transfer_rows(p, -omega)
    n = noise.matrix()
    values = np.einsum("ik,kl,il->i", t_neg, n, t_pos)
    # imaginary part is round-off for a hermitian observable
    values = values.real
    valid = ~(sing_pos | sing_neg) & np.isfinite(values)
    values = np.where(valid, values, np.nan)
    return Spectrum(omega, values, "bright_mode_psd", valid, meta={"ordering": noise.ordering})


# ---------------------------------------------------------------------------
# time-domain simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float
    seed: int
    segment_length: int
    overlap: float = 0.5
    window: str = "hann"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        if self.window != "hann":
            raise ValueError("only the 'hann' window is supported")
        if self.segment_length < 2:
            raise ValueError("segment_length must be >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.n_segments < 10:
            raise ValueError(
                f"duration covers {self.n_segments} segments; at least 10 are required"
            )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def step(self) -> int:
        return self.segment_length - int(self.segment_length * self.overlap)

    @property
    def n_segments(self) -> int:
        n = self.n_samples
        if n < self.segment_length:
            return 0
        return (n - self.segment_length) // self.step + 1

    @classmethod
    def for_segments(
        cls,
        p: SystemParams,
        n_segments: int,
        resolution_hz: float,
        seed: int,
        *,
        oversample: float = 1.25,
        overlap: float = 0.5,
    ) -> "SimConfig":
        """Choose dt just inside the resolution limit and a duration holding ``n_segments``."""
        dt = max_time_step(p) / oversample
        seg = int(math.ceil(1.0 / (resolution_hz * dt)))
        step = seg - int(seg * overlap)
        n = seg + (n_segments - 1) * step
        return cls(dt=dt, duration=n * dt, seed=seed, segment_length=seg, overlap=overlap)

    def check_against(self, p: SystemParams):
        limit = max_time_step(p)
        if not self.dt < limit:
            raise ValueError(f"dt={self.dt:g} s does not resolve the fastest rate (need < {limit:g} s)")

    def as_dict(self) -> dict:
        return asdict(self)


def max_time_step(p: SystemParams) -> float:
    return 0.05 / max(p.omega_x, p.omega_y, abs(p.delta), p.kappa)


def diffusion_matrix(p: SystemParams) -> np.ndarray:
    """Quadrature-basis diffusion for symmetrised vacuum and classical mechanical baths."""
    return np.diag([p.kappa, p.kappa, 2 * p.Gamma_x, 2 * p.Gamma_x, 2 * p.Gamma_y, 2 * p.Gamma_y])


def stationary_covariance(p: SystemParams) -> np.ndarray:
    a = build_drift(p)
    return linalg.solve_continuous_lyapunov(a, -diffusion_matrix(p))


def exact_discretization(a: np.ndarray, diffusion: np.ndarray, dt: float):
    """Propagator exp(A dt) and the exact one-step noise covariance (Van Loan)."""
    n = a.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a
    block[:n, n:] = diffusion
    block[n:, n:] = a.T
    e = linalg.expm(block * dt)
    phi = e[n:, n:].T
    q = phi @ e[:n, n:]
    return phi, 0.5 * (q + q.T)


def _covariance_root(q: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(q)
    return v * np.sqrt(np.clip(w, 0.0, None))


@njit(cache=True)
def _propagate(phi, x, noise, proj, limit, out):
    """Record ``proj @ x`` into ``out`` and advance ``x``, once per row.

    Row ``k`` holds the state before step ``k`` is applied. Returns the index
    of the first step at which a component exceeded ``limit`` (or -1).
    """
    n = out.shape[0]
    k = proj.shape[0]
    dim = x.shape[0]
    has_noise = noise.shape[0] > 0
    y = np.empty(dim)
    for step in range(n):
        for r in range(k):
            s = 0.0
            for j in range(dim):
                s += proj[r, j] * x[j]
            out[step, r] = s
        for i in range(dim):
            s = noise[step, i] if has_noise else 0.0
            for j in range(dim):
                s += phi[i, j] * x[j]
            y[i] = s
        for i in range(dim):
            x[i] = y[i]
            if abs(y[i]) > limit[i]:
                return step
    return -1


@dataclass(frozen=True)
class Trajectory:
    """Sampled trajectory; row ``i`` is the state at ``t = i * dt``."""

    dt: float
    values: np.ndarray
    labels: tuple
    seed: int
    config: SimConfig

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    def column(self, label: str) -> np.ndarray:
        if label not in self.labels:
            raise KeyError(f"no recorded column {label!r}; have {self.labels}")
        return self.values[:, self.labels.index(label)]


def bright_projection(p: SystemParams) -> np.ndarray:
    c = derive_couplings(p)
    return np.array([0.0, 0.0, c.u_x, 0.0, c.u_y, 0.0])


def simulate_trajectory(
    p: SystemParams,
    cfg: SimConfig,
    *,
    noise: bool = True,
    initial_state=None,
    observables: dict | None = None,
    chunk: int = 1 << 20,
) -> Trajectory:
    """Integrate the c-number Langevin equations with symmetrised noise.

    Without ``initial_state`` the run starts at rest and the first
    ``10 / min(mode decay)`` seconds are discarded; with it the record starts
    at that state. ``observables`` maps labels to 6-vectors that are recorded
    instead of the full state (saves memory for long runs).
    """
    a = build_drift(p)
    if not is_stable(a):
        raise UnstableSystemError("cannot simulate: drift matrix is unstable")
    cfg.check_against(p)

    diffusion = diffusion_matrix(p) if noise else np.zeros((6, 6))
    phi, q = exact_discretization(a, diffusion, cfg.dt)
    root = _covariance_root(q)

    if observables is None:
        labels, proj = STATE_LABELS, np.eye(6)
    else:
        labels = tuple(observables)
        proj = np.array([np.asarray(observables[k], dtype=float) for k in labels])

    x = np.zeros(6) if initial_state is None else np.array(initial_state, dtype=float)
    ref_var = np.diag(stationary_covariance(p)) if noise else np.zeros(6)
    ref_var = ref_var + np.max(x**2)
    limit = 1e3 * np.sqrt(np.where(ref_var > 0, ref_var, 1.0))

    rng = np.random.Generator(np.random.Philox(int(cfg.seed)))
    empty = np.zeros((0, 6))

    def run(n_steps, out):
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            w = rng.standard_normal((m, 6)) @ root.T if noise else empty
            bad = _propagate(phi, x, w, proj, limit, out[done : done + m])
            if bad >= 0:
                raise UnstableSystemError(
                    f"trajectory diverged at step {done + bad}: variance beyond 1e6 x stationary"
                )
            done += m

    if initial_state is None:
        slowest = min(mode.decay for mode in eigenmodes(a))
        n_transient = int(math.ceil(10.0 / slowest / cfg.dt))
        run(n_transient, _Sink(proj.shape[0]))

    out = np.empty((cfg.n_samples, proj.shape[0]))
    run(cfg.n_samples, out)
    return Trajectory(cfg.dt, out, labels, int(cfg.seed), cfg)


class _Sink:
    """Scratch output buffer for discarded transient steps."""

    def __init__(self, width):
        self._buf = np.empty((0, width))
        self.width = width

    def __getitem__(self, sl):
        n = sl.stop - sl.start
        if self._buf.shape[0] < n:
            self._buf = np.empty((n, self.width))
        return self._buf[:n]


# ---------------------------------------------------------------------------
# spectral estimation
# ---------------------------------------------------------------------------


def welch_psd(series, cfg: SimConfig) -> Spectrum:
    """Two-sided Welch PSD on an increasing angular-frequency grid.

    Density is per Hz, so summing ``values * df`` recovers the series variance.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.size < 2 * cfg.segment_length:
        raise ValueError("series shorter than two segments")
    noverlap = cfg.segment_length - cfg.step
    f, pxx = signal.welch(
        x,
        fs=1.0 / cfg.dt,
        window=cfg.window,
        nperseg=cfg.segment_length,
        noverlap=noverlap,
        return_onesided=False,
        scaling="density",
        detrend="constant",
    )
    f = np.fft.fftshift(f)
    pxx = np.fft.fftshift(pxx)
    n_seg = (x.size - cfg.segment_length) // cfg.step + 1
    return Spectrum(
        2 * np.pi * f,
        pxx,
        "bright_mode_psd",
        meta={"estimator": "welch", "segments": n_seg, "ordering": "symmetrized"},
    )


def band_rms_deviation(estimate: Spectrum, reference, band_hz, bin_hz: float) -> float:
    """Relative RMS deviation of ``estimate`` from ``reference`` over ``|f|`` in a band.

    Both are averaged over contiguous analysis bins of width ``bin_hz`` (per
    sign of frequency) before comparing; ``reference`` holds the model values
    on ``estimate.grid``.
    """
    f = estimate.f_hz
    reference = np.asarray(reference, dtype=float)
    lo, hi = band_hz
    n_bins = int(round((hi - lo) / bin_hz))
    rel = []
    for sign in (1.0, -1.0):
        af = sign * f
        sel = (af >= lo) & (af < lo + n_bins * bin_hz)
        idx = np.floor((af[sel] - lo) / bin_hz).astype(int)
        est = np.bincount(idx, estimate.values[sel], n_bins)
        ref = np.bincount(idx, reference[sel], n_bins)
        rel.append(est / ref - 1.0)
    rel = np.concatenate(rel)
    return float(np.sqrt(np.mean(rel**2)))
