"""Time-dispersive MIMO channels and their per-subcarrier decompositions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, RankDeficientError

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, np.random.Generator]

RANK_THRESHOLD = 1e-10


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Return a generator for ``seed``.

    Integers and integer tuples go through :class:`numpy.random.SeedSequence`,
    so ``(seed, channel, block)`` keys give independent, reproducible
    substreams regardless of the order in which they are requested.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if isinstance(seed, (int, np.integer)):
        entropy = [int(seed)]
    else:
        entropy = [int(s) for s in seed]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class SystemConfig:
    """Link dimensions and signal levels.

    Attributes
    ----------
    n_tx, n_rx : int
        Transmit and receive antennas.
    n_streams : int
        Spatial data streams ``M``; at most ``min(n_tx, n_rx)``.
    block_len : int
        Symbols per block, which is also the FFT size ``N_c``.
    cir_len : int
        Channel taps ``L``.
    cp_len : int
        Cyclic prefix length ``K`` in vector symbols; must cover the taps.
    sigma_s2, sigma_n2 : float
        Symbol and noise variances.
    power_budget : float
        Total precoder power ``P_T``.
    """

    n_tx: int = 2
    n_rx: int = 2
    n_streams: int = 2
    block_len: int = 64
    cir_len: int = 16
    cp_len: int = 16
    sigma_s2: float = 1.0
    sigma_n2: float = 1.0
    power_budget: float = 128.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems), fields=problems)

    def problems(self) -> list[str]:
        out = []
        for name in ("n_tx", "n_rx", "n_streams", "block_len", "cir_len", "cp_len"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                out.append(f"{name}: must be an integer >= 1 (got {v!r})")
        if self.n_streams > min(self.n_tx, self.n_rx):
            out.append("n_streams: M ≤ min(N_t,N_r) violated "
                       f"(M={self.n_streams}, N_t={self.n_tx}, N_r={self.n_rx})")
        if self.cp_len < self.cir_len:
            out.append(f"cp_len: K ≥ L violated (K={self.cp_len}, L={self.cir_len})")
        if self.block_len < self.cir_len:
            out.append(f"block_len: N_c ≥ L violated (N_c={self.block_len}, L={self.cir_len})")
        for name in ("sigma_s2", "sigma_n2", "power_budget"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                out.append(f"{name}: must be finite and > 0 (got {v!r})")
        return out

    @property
    def snr_db(self) -> float:
        """``10·log10(σs²·P_T / (M·N_c·σn²))``."""
        lin = self.sigma_s2 * self.power_budget / (
            self.n_streams * self.block_len * self.sigma_n2)
        return float(10.0 * np.log10(lin))

    def with_snr_db(self, snr_db: float) -> "SystemConfig":
        """Copy with σn² chosen so that :attr:`snr_db` equals ``snr_db``."""
        lin = 10.0 ** (snr_db / 10.0)
        sigma_n2 = self.sigma_s2 * self.power_budget / (
            self.n_streams * self.block_len * lin)
        return _replace(self, sigma_n2=sigma_n2)


def _replace(obj, **changes):
    from dataclasses import replace
    return replace(obj, **changes)


@dataclass(frozen=True)
class PowerDelayProfile:
    """Exponential power delay profile ``p[l] ∝ e^(−l/σ_t)``, ``l < L``.

    :meth:`weights` is normalised to unit total energy; :meth:`raw_weights`
    keeps the ``1/σ_t`` prefactor instead.
    """

    decay: float = 2.0
    length: int = 16

    def __post_init__(self):
        if not (self.decay > 0 and np.isfinite(self.decay)):
            raise ConfigError(f"decay: must be > 0 (got {self.decay!r})")
        if int(self.length) != self.length or self.length < 1:
            raise ConfigError(f"length: must be an integer >= 1 (got {self.length!r})")

    def raw_weights(self) -> np.ndarray:
        ell = np.arange(self.length)
        return np.exp(-ell / self.decay) / self.decay

    def weights(self) -> np.ndarray:
        w = self.raw_weights()
        return w / w.sum()


@dataclass(frozen=True)
class TimeDomainChannel:
    """Taps ``H_{t,l}`` stacked as an ``(L, N_r, N_t)`` complex array."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.ndim != 3:
            raise ConfigError(f"taps: expected (L, N_r, N_t), got shape {taps.shape}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.taps.shape[1], self.taps.shape[2]


@dataclass(frozen=True)
class FrequencyDomainChannel:
    """Per-subcarrier matrices ``H_{f,k}`` as an ``(N_c, N_r, N_t)`` array."""

    subcarriers: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.subcarriers, dtype=np.complex128)
        if h.ndim != 3:
            raise ConfigError(f"subcarriers: expected (N_c, N_r, N_t), got shape {h.shape}")
        h.setflags(write=False)
        object.__setattr__(self, "subcarriers", h)

    @property
    def n_subcarriers(self) -> int:
        return self.subcarriers.shape[0]


@dataclass(frozen=True)
class ChannelSvd:
    """Per-subcarrier SVD with singular values in ascending order.

    ``left`` is ``(N_c, N_r, N_r)``, ``right`` is ``(N_c, N_t, N_t)`` and
    ``H_{f,k} = left[k] @ Λ_k @ right[k]^H`` where ``Λ_k`` carries
    ``singular_values[k]`` on the trailing diagonal, matching the column
    order of ``left`` and ``right``. ``gains`` is ``(N_c, M)`` and holds the
    squares of the ``M`` largest singular values, weakest first.
    """

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray
    gains: np.ndarray
    n_streams: int = field(default=0)

    @property
    def retained_right(self) -> np.ndarray:
        """The ``M`` right-most columns of each ``V_H^(k)``, ``(N_c, N_t, M)``."""
        return self.right[:, :, self.right.shape[2] - self.n_streams:]

    def sigma_matrix(self) -> np.ndarray:
        """``Λ_H^(k)`` as dense ``(N_c, N_r, N_t)`` rectangular diagonals."""
        nc, nr, _ = self.left.shape
        nt = self.right.shape[1]
        lam = np.zeros((nc, nr, nt))
        r = self.singular_values.shape[1]
        # ascending values sit in the bottom-right corner block
        for i in range(r):
            lam[:, nr - r + i, nt - r + i] = self.singular_values[:, i]
        return lam

    def reconstruct(self) -> np.ndarray:
        lam = self.sigma_matrix()
        return self.left @ lam @ np.conj(np.swapaxes(self.right, 1, 2))


def generate_channel(cfg: SystemConfig, pdp: PowerDelayProfile, seed: SeedLike) -> TimeDomainChannel:
    """Draw an uncorrelated Rayleigh channel whose tap ``l`` has entry variance ``p[l]``.

    ``p`` is the unit-energy normalised profile, so the expected squared
    Frobenius norm summed over taps equals ``N_r·N_t``.
    """
    if pdp.length != cfg.cir_len:
        raise ConfigError(
            f"power delay profile length {pdp.length} != cir_len {cfg.cir_len}")
    rng = make_rng(seed)
    shape = (cfg.cir_len, cfg.n_rx, cfg.n_tx)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    scale = np.sqrt(pdp.weights())[:, None, None]
    return TimeDomainChannel(scale * g)


def to_frequency_domain(ch: TimeDomainChannel, n_c: int) -> FrequencyDomainChannel:
    """Unnormalised DFT of the zero-padded taps: ``H_{f,k} = Σ_l H_{t,l} e^(−j2πkl/N_c)``."""
    if n_c < ch.n_taps:
        raise ConfigError(f"n_c={n_c} is shorter than the channel ({ch.n_taps} taps)")
    return FrequencyDomainChannel(np.fft.fft(ch.taps, n=n_c, axis=0))


def decompose(fd: FrequencyDomainChannel, m: int, rank_threshold: float = RANK_THRESHOLD) -> ChannelSvd:
    """SVD of every subcarrier, reordered to ascending singular values.

    Raises
    ------
    RankDeficientError
        If some subcarrier has ``σ_m / σ_1 < rank_threshold`` for the ``m``-th
        largest singular value ``σ_m``.
    """
    h = fd.subcarriers
    nc, nr, nt = h.shape
    if m > min(nr, nt) or m < 1:
        raise ConfigError(f"m={m} must lie in [1, min(N_r, N_t)={min(nr, nt)}]")
    u, s, vh = np.linalg.svd(h)  # descending
    ratio = s[:, m - 1] / np.where(s[:, 0] > 0, s[:, 0], 1.0)
    bad = np.flatnonzero((ratio < rank_threshold) | (s[:, 0] == 0))
    if bad.size:
        raise RankDeficientError(
            f"channel rank below {m} at subcarrier(s) {bad.tolist()}", subcarriers=bad.tolist())
    r = s.shape[1]
    s_asc = s[:, ::-1]
    # reverse the first r singular-vector columns so their order matches s_asc
    u_asc = np.concatenate([u[:, :, r:], u[:, :, :r][:, :, ::-1]], axis=2)
    v = np.conj(np.swapaxes(vh, 1, 2))
    v_asc = np.concatenate([v[:, :, r:], v[:, :, :r][:, :, ::-1]], axis=2)
    gains = s_asc[:, r - m:] ** 2
    out = ChannelSvd(left=u_asc, singular_values=s_asc, right=v_asc, gains=gains, n_streams=m)
    for arr in (out.left, out.singular_values, out.right, out.gains):
        arr.setflags(write=False)
    return out


def build_block_circulant(ch: TimeDomainChannel, n_c: int) -> np.ndarray:
    """Dense ``(N_r·N_c, N_t·N_c)`` matrix whose block ``(r, c)`` is ``H_{t,(r−c) mod N_c}``."""
    if n_c < ch.n_taps:
        raise ConfigError(f"n_c={n_c} is shorter than the channel ({ch.n_taps} taps)")
    nr, nt = ch.shape
    out = np.zeros((nr * n_c, nt * n_c), dtype=np.complex128)
    for r in range(n_c):
        for c in range(n_c):
            ell = (r - c) % n_c
            if ell < ch.n_taps:
                out[r * nr:(r + 1) * nr, c * nt:(c + 1) * nt] = ch.taps[ell]
    return out


def unitary_dft(n: int) -> np.ndarray:
    """``F[k, n] = e^(−j2πkn/N)/√N``."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def block_dft(n_c: int, x: int) -> np.ndarray:
    """``F_X = F ⊗ I_X`` for symbol vectors stacked time-major."""
    return np.kron(unitary_dft(n_c), np.eye(x))


def block_diag(blocks: np.ndarray) -> np.ndarray:
    """Dense block-diagonal matrix from an ``(N_c, r, c)`` stack."""
    nc, r, c = blocks.shape
    out = np.zeros((nc * r, nc * c), dtype=np.result_type(blocks, np.complex128))
    for k in range(nc):
        out[k * r:(k + 1) * r, k * c:(k + 1) * c] = blocks[k]
    return out
