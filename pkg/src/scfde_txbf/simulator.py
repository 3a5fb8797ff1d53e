"""Waveform-level Monte Carlo link simulation.

Blocks of Gray-mapped QPSK symbols go through the full time-domain chain:
per-stream FFT, per-subcarrier precoding, per-antenna IFFT, cyclic prefix,
tap-wise convolution, AWGN, CP removal, FFT, MMSE equalisation, IFFT and
hard decisions.

Random substreams are keyed by ``(seed, channel, 0)`` for the channel draw
and ``(seed, channel, block + 1)`` for the data and noise of each block. The
same keys are used for every criterion and SNR, so criteria are compared on
common random numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .channel import (ChannelSvd, PowerDelayProfile, SystemConfig, TimeDomainChannel,
                      decompose, generate_channel, make_rng, to_frequency_domain)
from .equalizer import BeamformerSet, EqualizerSet, StreamMse, mmse_filter, stream_mse
from .errors import ConfigError, ConvergenceError, RankDeficientError
from .optimizer import (Criterion, CriterionKind, PowerAllocation, SolverConfig,
                        assemble_beamformer, q_function, solve_dual)

EPA = "EPA"
"""Pseudo-criterion selecting the equal power allocation baseline."""

Design = Union[Criterion, str]


def parse_design(value) -> Design:
    """``"EPA"`` (any case) or a :class:`Criterion`."""
    if isinstance(value, Criterion):
        return value
    if str(value).strip().upper() == EPA:
        return EPA
    return Criterion.parse(value)


def design_name(d: Design) -> str:
    return EPA if d == EPA else d.name


def epa_allocation(cfg: SystemConfig) -> PowerAllocation:
    """``P_km = P_T/(N_c·M)`` everywhere."""
    return PowerAllocation(np.full((cfg.block_len, cfg.n_streams),
                                   cfg.power_budget / (cfg.block_len * cfg.n_streams)))


@dataclass(frozen=True)
class LinkRealization:
    channel: TimeDomainChannel
    beamformer: BeamformerSet
    equalizer: EqualizerSet
    snr_db: float

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        nc, nt, m = self.beamformer.precoders.shape
        nr, nt_ch = self.channel.shape
        if nt_ch != nt or self.equalizer.filters.shape != (nc, m, nr):
            raise ConfigError("channel, beamformer and equalizer dimensions disagree")


# ---------------------------------------------------------------------------
# QPSK
# ---------------------------------------------------------------------------

def qpsk_modulate(bits: np.ndarray, sigma_s2: float = 1.0) -> np.ndarray:
    """Gray mapping of bit pairs along the last axis: ``b → (1−2b₀) + j(1−2b₁)``, scaled to variance σs²."""
    b = np.asarray(bits)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) * math.sqrt(sigma_s2 / 2.0)


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    s = np.asarray(symbols)
    return np.stack([(s.real < 0), (s.imag < 0)], axis=-1).astype(np.int8)


# ---------------------------------------------------------------------------
# block chain
# ---------------------------------------------------------------------------

def noise_variance(cfg: SystemConfig, snr_db: float) -> float:
    """σn² from ``SNR = σs²·P_T/(M·N_c·σn²)``."""
    return cfg.with_snr_db(snr_db).sigma_n2


def transmit(bf: BeamformerSet, s: np.ndarray) -> np.ndarray:
    """Time-domain antenna samples ``(blocks, N_c, N_t)`` for symbols ``(blocks, N_c, M)``."""
    sf = np.fft.fft(s, axis=1, norm="ortho")
    xf = np.einsum("ktm,bkm->bkt", bf.precoders, sf)
    return np.fft.ifft(xf, axis=1, norm="ortho")


def receive(eq: EqualizerSet, y: np.ndarray) -> np.ndarray:
    """Equalised time-domain estimates from CP-stripped samples ``(blocks, N_c, N_r)``."""
    yf = np.fft.fft(y, axis=1, norm="ortho")
    zf = np.einsum("kmr,bkr->bkm", eq.filters, yf)
    return np.fft.ifft(zf, axis=1, norm="ortho")


def _draw(rngs, nc, m, nr, total):
    bits = np.empty((len(rngs), nc, m, 2), dtype=np.int8)
    noise = np.empty((len(rngs), total, nr), dtype=np.complex128)
    for i, rng in enumerate(rngs):
        bits[i] = rng.integers(0, 2, size=(nc, m, 2), dtype=np.int8)
        g = rng.standard_normal((total, nr, 2))
        noise[i] = (g[..., 0] + 1j * g[..., 1]) / math.sqrt(2.0)
    return bits, noise


def simulate_blocks(real: LinkRealization, cfg: SystemConfig, rngs: Sequence):
    """Run one block per generator; returns ``(tx_bits, rx_bits, s, s_hat)``.

    Bits are ``(blocks, N_c, M, 2)``, symbols ``(blocks, N_c, M)``.
    """
    nc, _, m = real.beamformer.precoders.shape
    nr = real.channel.shape[0]
    k = cfg.cp_len
    if k < real.channel.n_taps:
        raise ConfigError(f"cp_len={k} shorter than channel ({real.channel.n_taps} taps)")
    sigma_n2 = noise_variance(cfg, real.snr_db)
    bits, noise = _draw(rngs, nc, m, nr, nc + k)
    s = qpsk_modulate(bits, cfg.sigma_s2)
    x = transmit(real.beamformer, s)
    y = kernels.channel_convolve(x, real.channel.taps, k)
    y = y + math.sqrt(sigma_n2) * noise
    s_hat = receive(real.equalizer, y[:, k:, :])
    return bits, qpsk_demodulate(s_hat), s, s_hat


def run_block(real: LinkRealization, cfg: SystemConfig, rng):
    """Transmit one block; returns ``(tx_bits, rx_bits)`` as ``(N_c, M, 2)`` arrays."""
    tx, rx, _, _ = simulate_blocks(real, cfg, [make_rng(rng)])
    return tx[0], rx[0]


def frequency_domain_output(real: LinkRealization, cfg: SystemConfig, s: np.ndarray,
                            noise_f: np.ndarray) -> np.ndarray:
    """Per-subcarrier model ``ŝ = F_Mᴴ W_k (H_k P_k S_k + N_k)`` for symbols ``(blocks, N_c, M)``."""
    hf = to_frequency_domain(real.channel, s.shape[1]).subcarriers
    sf = np.fft.fft(s, axis=1, norm="ortho")
    yf = np.einsum("krt,ktm,bkm->bkr", hf, real.beamformer.precoders, sf) + noise_f
    zf = np.einsum("kmr,bkr->bkm", real.equalizer.filters, yf)
    return np.fft.ifft(zf, axis=1, norm="ortho")


def transmit_energy_map(bf: BeamformerSet) -> np.ndarray:
    """Dense map from stacked symbols ``vec(s)`` to stacked antenna samples ``vec(x)``."""
    nc, nt, m = bf.precoders.shape
    eye = np.eye(nc * m, dtype=np.complex128).reshape(nc * m, nc, m)
    return transmit(bf, eye).reshape(nc * m, nc * nt).T


# ---------------------------------------------------------------------------
# analytic metrics
# ---------------------------------------------------------------------------

def _norm_mse(mse) -> np.ndarray:
    e = np.asarray(mse.normalized if isinstance(mse, StreamMse) else mse, dtype=float)
    if np.any(e <= 0) or np.any(e > 1 + 1e-12):
        raise ConfigError(f"normalised MSEs must lie in (0, 1], got {e}")
    return np.minimum(e, 1.0)


def achievable_bit_rate(mse, cfg: Optional[SystemConfig] = None) -> float:
    """``Σ_m log₂(1 + SINR_m) = −Σ_m log₂ e_m`` in bits per vector symbol."""
    return float(max(-np.sum(np.log2(_norm_mse(mse))), 0.0))


def theoretical_aber(mse, c: Criterion) -> float:
    """Mean per-stream ``α·Q(√(β·SINR_m))``."""
    if c.kind is not CriterionKind.ABER:
        raise ConfigError("theoretical_aber needs an ABER criterion (for α, β)")
    sinr = 1.0 / _norm_mse(mse) - 1.0
    return float(np.mean(c.ber_alpha * q_function(np.sqrt(c.ber_beta * sinr))))


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloRecord:
    snr_db: float
    criterion: str
    ber: float
    ber_stderr: float
    abr_bits_per_symbol: float
    trials: int
    bits_counted: int
    bit_errors: int
    excluded: int


@dataclass
class MonteCarloReport:
    records: list
    traces: dict = field(default_factory=dict)
    exclusions: list = field(default_factory=list)
    n_channels: int = 0

    def get(self, snr_db: float, criterion) -> MonteCarloRecord:
        name = design_name(parse_design(criterion))
        for r in self.records:
            if r.snr_db == snr_db and r.criterion == name:
                return r
        raise KeyError((snr_db, name))


@dataclass
class _ChannelResult:
    errors: dict
    bits: dict
    abr: dict
    traces: dict
    excluded: list


def _designs_for(d: Design, svd: ChannelSvd, cfg: SystemConfig, sc: SolverConfig):
    if d == EPA:
        return assemble_beamformer(svd, epa_allocation(cfg), Criterion(CriterionKind.AMSE)), []
    res = solve_dual(d, svd, cfg, sc)
    if not res.state.converged:
        raise ConvergenceError(
            f"{d.name}: dual iteration stopped at gap {res.state.constraint_gap:.3g}",
            residual=abs(res.state.constraint_gap), iterations=res.state.iteration)
    return assemble_beamformer(svd, res.allocation, d), res.trace


def _run_channel(idx: int, cfg: SystemConfig, pdp: PowerDelayProfile, designs, snrs,
                 blocks: int, seed: int, sc: SolverConfig, keep_traces: bool) -> _ChannelResult:
    out = _ChannelResult({}, {}, {}, {}, [])
    ch = generate_channel(cfg, pdp, (seed, idx, 0))
    fd = to_frequency_domain(ch, cfg.block_len)
    try:
        svd = decompose(fd, cfg.n_streams)
    except RankDeficientError as exc:
        out.excluded.append({"channel": idx, "snr_db": None, "criterion": None,
                             "error": type(exc).__name__, "message": str(exc)})
        return out
    for snr in snrs:
        c_snr = cfg.with_snr_db(snr)
        rngs = None
        for d in designs:
            key = (snr, design_name(d))
            try:
                bf, trace = _designs_for(d, svd, c_snr, sc)
            except (ConvergenceError, ArithmeticError) as exc:
                out.excluded.append({"channel": idx, "snr_db": snr, "criterion": key[1],
                                     "error": type(exc).__name__, "message": str(exc)})
                continue
            eq = mmse_filter(fd, bf, c_snr)
            real = LinkRealization(ch, bf, eq, snr)
            # fresh generators per design so every design sees the same draws
            rngs = [make_rng((seed, idx, b + 1)) for b in range(blocks)]
            tx, rx, _, _ = simulate_blocks(real, c_snr, rngs)
            out.errors[key] = int(np.count_nonzero(tx != rx))
            out.bits[key] = int(tx.size)
            out.abr[key] = achievable_bit_rate(stream_mse(fd, bf, c_snr), c_snr)
            if keep_traces and trace:
                out.traces[key] = trace
    return out


def monte_carlo_sweep(cfg: SystemConfig, pdp: PowerDelayProfile, criteria: Sequence,
                      snrs_db: Sequence[float], n_channels: int, blocks_per_channel: int,
                      seed: int, solver: SolverConfig = SolverConfig(), threads: int = 1,
                      keep_traces: bool = False) -> MonteCarloReport:
    """BER and ABR per (SNR, criterion) over random channels.

    Channels are independent work units; with ``threads > 1`` they run on a
    thread pool but results are always combined in channel order, so the
    report does not depend on the thread count. Channels whose design fails
    are excluded from that (SNR, criterion) cell and listed in
    ``report.exclusions``.
    """
    if n_channels < 1 or blocks_per_channel < 1:
        raise ConfigError("n_channels and blocks_per_channel must be >= 1")
    if not criteria or not len(snrs_db):
        raise ConfigError("criteria and snrs_db must be non-empty")
    designs = [parse_design(c) for c in criteria]
    snrs = [float(s) for s in snrs_db]

    def work(i):
        return _run_channel(i, cfg, pdp, designs, snrs, blocks_per_channel, int(seed),
                            solver, keep_traces)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_channels)))
    else:
        results = [work(i) for i in range(n_channels)]

    report = MonteCarloReport(records=[], n_channels=n_channels)
    for i, r in enumerate(results):
        report.exclusions.extend(r.excluded)
        for key, tr in r.traces.items():
            report.traces.setdefault(f"{key[1]}@{key[0]:g}", {})[i] = tr
    for snr in snrs:
        for d in designs:
            key = (snr, design_name(d))
            errs = bits = trials = 0
            abr = 0.0
            for r in results:
                if key in r.bits:
                    errs += r.errors[key]
                    bits += r.bits[key]
                    abr += r.abr[key]
                    trials += 1
            ber = errs / bits if bits else math.nan
            stderr = math.sqrt(ber * (1 - ber) / bits) if bits else math.nan
            report.records.append(MonteCarloRecord(
                snr_db=snr, criterion=key[1], ber=ber, ber_stderr=stderr,
                abr_bits_per_symbol=abr / trials if trials else math.nan,
                trials=trials * blocks_per_channel, bits_counted=bits, bit_errors=errs,
                excluded=n_channels - trials))
    return report
