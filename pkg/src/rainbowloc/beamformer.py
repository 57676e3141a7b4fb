"""Trainable phase-shifter / true-time-delay transmit front end.

Each antenna n applies the frequency-dependent weight

    w_n(f_m) = exp(j (phi_n - 2 pi f_m t_n)),  phi_n in [0, 2pi), t_n in [0, 1/f_scs).

The raw trainable vectors are unconstrained reals projected by modulo into
those ranges.  The workhorse here is ``subcarrier_sums``: the coherent sum
over antennas for every user and subcarrier at once, evaluated via a
cumulative product along the uniform frequency grid (one complex exp per
antenna instead of one per antenna-subcarrier pair).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import DerivedGrids, SystemConfig, watts_to_dbm
from .geometry import ChannelMatrix, geometry_delays, receive_gain_consts

# chunk grid/batch axes so scratch arrays stay below ~256 MB
_CHUNK_BYTES = 256 * 2**20


@dataclass
class PtaParams:
    """Unconstrained trainable phase and delay vectors (length N each)."""

    theta_phi: np.ndarray
    theta_t: np.ndarray

    def copy(self) -> "PtaParams":
        return PtaParams(self.theta_phi.copy(), self.theta_t.copy())


@dataclass(frozen=True)
class ProjectedPta:
    """Physical phases in [0, 2pi) and delays in [0, 1/f_scs)."""

    phi: np.ndarray
    delays: np.ndarray


def project_params(params: PtaParams, cfg: SystemConfig) -> ProjectedPta:
    """Modulo-project raw parameters into their physical ranges."""
    if not (np.all(np.isfinite(params.theta_phi))
            and np.all(np.isfinite(params.theta_t))):
        raise ValueError("non-finite beamformer parameters")
    return ProjectedPta(
        phi=np.mod(params.theta_phi, 2.0 * math.pi),
        delays=np.mod(params.theta_t, cfg.max_delay_s),
    )


def init_pta_params(cfg: SystemConfig, rng: np.random.Generator) -> PtaParams:
    """Random phases plus a linear delay ramp with jitter.

    The ramp slope 1/B spreads the initial beam across the band so early
    training sees subcarrier-dependent structure instead of a flat loss.
    """
    n = cfg.num_antennas
    theta_phi = rng.uniform(0.0, 2.0 * math.pi, n)
    tau0 = 1.0 / (cfg.num_subcarriers * cfg.subcarrier_spacing_hz)
    theta_t = np.arange(1, n + 1) * tau0 \
        + rng.uniform(0.0, 0.1 * cfg.max_delay_s, n)
    return PtaParams(theta_phi=theta_phi, theta_t=theta_t)


def beam_weights(proj: ProjectedPta, m: int, grids: DerivedGrids) -> np.ndarray:
    """Unit-modulus transmit weights for subcarrier m (1-based), length N."""
    f_m = grids.subcarrier_freqs_hz[m - 1]
    return np.exp(1j * (proj.phi - 2.0 * math.pi * f_m * proj.delays))


def beam_weights_all(phi, delays, freqs) -> np.ndarray:
    """Weights for every subcarrier, shape (M, N)."""
    phase = phi[None, :] - 2.0 * math.pi * freqs[:, None] * delays[None, :]
    return np.exp(1j * phase)


# --- coherent antenna sums ---------------------------------------------------

def _check_uniform(freqs):
    step = np.diff(freqs)
    if freqs.size < 2 or not np.allclose(step, step[0], rtol=1e-12, atol=0.0):
        raise ValueError("subcarrier grid must be uniformly spaced")
    return freqs[0], step[0]


def _sums_kernel(const_phase, ramp, freqs, dtype, want_terms):
    """S[k, m] = sum_n exp(j(const_phase[n] + 2 pi f_m ramp[k, n])).

    Exploits the uniform frequency grid: the m-th term is base * step^m, so
    the whole (K, N, M) phasor block is one cumulative product.
    """
    f0, fstep = _check_uniform(freqs)
    k, n = ramp.shape
    m = freqs.size
    base = np.exp(1j * (const_phase[None, :] + 2.0 * math.pi * f0 * ramp))
    z = np.exp(1j * (2.0 * math.pi * fstep * ramp))
    terms = np.empty((k, n, m), dtype=dtype)
    terms[:, :, 0] = base
    terms[:, :, 1:] = z[:, :, None]
    np.multiply.accumulate(terms, axis=2, out=terms)
    s = terms.sum(axis=1)
    if want_terms:
        return s, terms
    return s


def subcarrier_sums(phi, delays, geom_delays, freqs, center_freq=0.0,
                    dtype=np.complex128) -> np.ndarray:
    """Coherent sums S[k, m] = sum_n exp(j(phi_n - 2pi(f_m - f0)t_n + 2pi f_m tau_kn)).

    ``geom_delays`` is the (K, N) output of geometry_delays; ``center_freq``
    is the frequency at which the phase vector is anchored (0 for the
    physical phase-shifter convention).  Chunks over users to bound memory.
    """
    phi = np.asarray(phi, dtype=np.float64)
    delays = np.asarray(delays, dtype=np.float64)
    geom_delays = np.atleast_2d(np.asarray(geom_delays, dtype=np.float64))
    k, n = geom_delays.shape
    m = freqs.size
    const_phase = phi + 2.0 * math.pi * center_freq * delays
    ramp = geom_delays - delays[None, :]
    out = np.empty((k, m), dtype=dtype)
    step = max(1, _CHUNK_BYTES // (n * m * np.dtype(dtype).itemsize))
    for lo in range(0, k, step):
        hi = min(lo + step, k)
        out[lo:hi] = _sums_kernel(const_phase, ramp[lo:hi], freqs, dtype, False)
    return out


def taped_subcarrier_sums(phase: ad.Value, delays: ad.Value, geom_delays,
                          freqs, center_freq=0.0,
                          dtype=np.complex128) -> ad.Value:
    """Differentiable version of :func:`subcarrier_sums` for the training graph.

    ``phase`` and ``delays`` are real leaves of length N.  The per-term
    phasor block from the forward pass is kept for the backward pass, which
    reduces it against the upstream gradient in one sweep.
    """
    geom_delays = np.atleast_2d(np.asarray(geom_delays, dtype=np.float64))
    const_phase = phase.data + 2.0 * math.pi * center_freq * delays.data
    ramp = geom_delays - delays.data[None, :]
    s, terms = _sums_kernel(const_phase, ramp, freqs, dtype, True)
    f_rel = np.asarray(freqs - center_freq)

    def backward(w):
        w = np.ascontiguousarray(w.astype(terms.dtype, copy=False))
        r = (w[:, None, :] * terms).imag
        g_phase = -r.sum(axis=(0, 2))
        g_delay = 2.0 * math.pi * np.einsum("knm,m->n", r, f_rel)
        return (g_phase.astype(np.float64), g_delay.astype(np.float64))

    return phase.tape.record((phase, delays), s.astype(np.complex128), backward)


# --- received signal ---------------------------------------------------------

def sample_noise(rng: np.random.Generator, shape, noise_power_w) -> np.ndarray:
    """Circularly symmetric complex Gaussian with the given total variance."""
    scale = math.sqrt(noise_power_w / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def received_signal(h: ChannelMatrix, proj: ProjectedPta, grids: DerivedGrids,
                    noise_seed=None, include_noise=True) -> np.ndarray:
    """y_m = h_m^H w(m) s_m + n_m for one user, length M.

    Evaluates the channel/weight inner products directly (no fast kernel),
    which keeps this path independent for cross-checks.  Noise is seeded
    deterministically.
    """
    m_count, n_count = h.h.shape
    if proj.phi.shape != (n_count,) or proj.delays.shape != (n_count,):
        raise ValueError("beamformer length does not match channel")
    freqs = grids.subcarrier_freqs_hz
    if freqs.size != m_count:
        raise ValueError("subcarrier grid does not match channel")
    w = beam_weights_all(proj.phi, proj.delays, freqs)
    y = (np.conj(h.h) * w).sum(axis=1) * grids.per_subcarrier_tx_amplitude
    if include_noise:
        rng = np.random.default_rng(noise_seed)
        y = y + sample_noise(rng, m_count, grids.per_subcarrier_noise_power_w)
    return y


def received_powers(proj: ProjectedPta, angles_rad, ranges_m, cfg: SystemConfig,
                    grids: DerivedGrids, noise=None) -> np.ndarray:
    """Noiseless (or noise-injected) received powers |y|^2 in watts, shape (K, M)."""
    geom = geometry_delays(angles_rad, ranges_m, cfg, grids)
    consts = receive_gain_consts(angles_rad, ranges_m, cfg, grids)
    s = subcarrier_sums(proj.phi, proj.delays, geom, grids.subcarrier_freqs_hz)
    y = consts * s
    if noise is not None:
        y = y + noise
    return (y * np.conj(y)).real


# --- power maps --------------------------------------------------------------

def beam_pattern_map(proj: ProjectedPta, angle_grid, range_grid,
                     cfg: SystemConfig, grids: DerivedGrids,
                     subcarrier: int | None = None,
                     include_path_loss: bool = True) -> np.ndarray:
    """Power over an (angle, range) grid, max over subcarriers, noiseless.

    Returns dBm when path loss is included (received power), else dB of the
    squared coherence |sum_n e^{j psi}|^2 (array gain, peak N^2).  Selecting a
    single 1-based ``subcarrier`` skips the max.  Shape (len(angle_grid),
    len(range_grid)).
    """
    angle_grid = np.asarray(angle_grid, dtype=np.float64)
    range_grid = np.asarray(range_grid, dtype=np.float64)
    if angle_grid.size == 0 or range_grid.size == 0:
        raise ValueError("empty evaluation grid")
    ang = np.repeat(angle_grid, range_grid.size)
    rng_m = np.tile(range_grid, angle_grid.size)
    total = ang.size
    m_count = grids.subcarrier_freqs_hz.size
    best = np.empty(total)
    step = max(1, _CHUNK_BYTES // (m_count * max(cfg.num_antennas, 16) * 16))
    for lo in range(0, total, step):
        hi = min(lo + step, total)
        geom = geometry_delays(ang[lo:hi], rng_m[lo:hi], cfg, grids)
        if subcarrier is not None:
            f_m = grids.subcarrier_freqs_hz[subcarrier - 1]
            phase = proj.phi - 2.0 * math.pi * f_m * proj.delays
            s = np.exp(1j * (phase[None, :] + 2.0 * math.pi * f_m * geom)).sum(axis=1)
            power = np.abs(s[:, None]) ** 2
            if include_path_loss:
                consts = receive_gain_consts(ang[lo:hi], rng_m[lo:hi], cfg, grids)
                power = power * np.abs(consts[:, subcarrier - 1:subcarrier]) ** 2
        else:
            s = subcarrier_sums(proj.phi, proj.delays, geom,
                                grids.subcarrier_freqs_hz)
            power = np.abs(s) ** 2
            if include_path_loss:
                consts = receive_gain_consts(ang[lo:hi], rng_m[lo:hi], cfg, grids)
                power = power * np.abs(consts) ** 2
        best[lo:hi] = power.max(axis=1)
    db = watts_to_dbm(best) if include_path_loss else 10.0 * np.log10(best)
    return db.reshape(angle_grid.size, range_grid.size)
