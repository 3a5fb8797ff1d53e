"""Linear MMSE frequency-domain equalisation and the resulting stream MSEs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import (FrequencyDomainChannel, SystemConfig, TimeDomainChannel,
                      block_dft, block_diag, build_block_circulant)
from .errors import ConfigError

DENSE_LIMIT = 32


@dataclass(frozen=True)
class BeamformerSet:
    """Per-subcarrier precoders ``P_k`` stacked as ``(N_c, N_t, M)``.

    ``allocation`` and ``gains`` are only set for beamformers built by
    :func:`scfde_txbf.optimizer.assemble_beamformer`; their presence enables
    the diagonal fast path in :func:`stream_mse`.
    """

    precoders: np.ndarray
    rotation: np.ndarray
    allocation: Optional[object] = None
    gains: Optional[np.ndarray] = None

    @property
    def n_streams(self) -> int:
        return self.precoders.shape[2]

    @property
    def structured(self) -> bool:
        return self.allocation is not None and self.gains is not None

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.precoders) ** 2))

    @classmethod
    def unstructured(cls, precoders) -> "BeamformerSet":
        p = np.asarray(precoders, dtype=np.complex128)
        return cls(precoders=p, rotation=np.eye(p.shape[2], dtype=np.complex128))


@dataclass(frozen=True)
class EqualizerSet:
    """Filters ``W_k`` stacked as ``(N_c, M, N_r)``."""

    filters: np.ndarray


@dataclass(frozen=True)
class StreamMse:
    """Diagonal of the time-domain error covariance, one entry per stream."""

    values: np.ndarray
    sigma_s2: float = 1.0

    @property
    def normalized(self) -> np.ndarray:
        """MSEs divided by σs², each in ``(0, 1]``."""
        return np.asarray(self.values) / self.sigma_s2

    @property
    def sinr(self) -> np.ndarray:
        return 1.0 / self.normalized - 1.0


def _check(fd: FrequencyDomainChannel, bf: BeamformerSet):
    h, p = fd.subcarriers, bf.precoders
    if h.shape[0] != p.shape[0] or h.shape[2] != p.shape[1]:
        raise ConfigError(
            f"channel {h.shape} and precoders {p.shape} disagree on N_c or N_t")


def psi_k(h_fk, p_k, cfg: SystemConfig) -> np.ndarray:
    """``Ψ_k = (σs²/σn²)·P_k^H H_k^H H_k P_k + I_M``; broadcasts over a leading axis."""
    hp = np.asarray(h_fk) @ np.asarray(p_k)
    gram = np.conj(np.swapaxes(hp, -1, -2)) @ hp
    m = gram.shape[-1]
    return (cfg.sigma_s2 / cfg.sigma_n2) * gram + np.eye(m)


def _hpd_inverse(a: np.ndarray) -> np.ndarray:
    # Ψ ⪰ I, so the Cholesky factor always exists
    chol = np.linalg.cholesky(a)
    linv = np.linalg.inv(chol)
    return np.conj(np.swapaxes(linv, -1, -2)) @ linv


def mmse_filter(fd: FrequencyDomainChannel, bf: BeamformerSet, cfg: SystemConfig) -> EqualizerSet:
    """``W_k = (σs²/σn²)·Ψ_k⁻¹ P_k^H H_{f,k}^H`` for every subcarrier.

    The ``1/σn²`` factor is what makes the error covariance equal
    ``σs²·Ψ_k⁻¹``; it disappears when ``σn² = 1``.
    """
    _check(fd, bf)
    psi = psi_k(fd.subcarriers, bf.precoders, cfg)
    hp = fd.subcarriers @ bf.precoders
    w = (cfg.sigma_s2 / cfg.sigma_n2) * _hpd_inverse(psi) @ np.conj(np.swapaxes(hp, 1, 2))
    return EqualizerSet(w)


def mse_matrix(fd: FrequencyDomainChannel, bf: BeamformerSet, cfg: SystemConfig) -> np.ndarray:
    """Full ``M×M`` matrix ``Ê = (σs²/N_c) Σ_k Ψ_k⁻¹`` (general path)."""
    _check(fd, bf)
    psi = psi_k(fd.subcarriers, bf.precoders, cfg)
    inv = _hpd_inverse(psi)
    return cfg.sigma_s2 * _pairwise_sum(inv) / fd.n_subcarriers


def _pairwise_sum(x: np.ndarray) -> np.ndarray:
    # fixed summation tree over the leading axis
    while x.shape[0] > 1:
        n = x.shape[0]
        half = n // 2
        head = x[:half] + x[half:2 * half]
        x = np.concatenate([head, x[2 * half:]], axis=0) if n % 2 else head
    return x[0]


def structured_mse_matrix(bf: BeamformerSet, cfg: SystemConfig) -> np.ndarray:
    """``Ê = V_0^H [(σs²/N_c) Σ_k diag(Ψ_km⁻¹)] V_0`` from allocation and gains."""
    if not bf.structured:
        raise ConfigError("beamformer carries no allocation/gains; use mse_matrix")
    p = np.asarray(bf.allocation.p)
    psi_diag = (cfg.sigma_s2 / cfg.sigma_n2) * p * bf.gains + 1.0
    d = cfg.sigma_s2 * _pairwise_sum(1.0 / psi_diag) / p.shape[0]
    v0 = bf.rotation
    return np.conj(v0.T) @ np.diag(d) @ v0


def stream_mse(fd: FrequencyDomainChannel, bf: BeamformerSet, cfg: SystemConfig,
               path: str = "auto") -> StreamMse:
    """Per-stream MSEs ``diag(Ê)``.

    ``path`` is ``"auto"`` (diagonal formula when ``bf`` is structured),
    ``"fast"`` or ``"general"``.
    """
    if path == "fast" or (path == "auto" and bf.structured):
        e = structured_mse_matrix(bf, cfg)
    elif path in ("general", "auto"):
        e = mse_matrix(fd, bf, cfg)
    else:
        raise ValueError(f"unknown path {path!r}")
    return StreamMse(np.real(np.diag(e)).copy(), cfg.sigma_s2)


def dense_mse_matrix(ch: TimeDomainChannel, bf: BeamformerSet, eq: EqualizerSet,
                     cfg: SystemConfig) -> np.ndarray:
    """The ``M·N_c × M·N_c`` error covariance built from dense block matrices.

    The received block is ``y = H_t F_{N_t}^H P_f F_M s + n`` with ``H_t`` the
    block-circulant tap matrix, and the equaliser output is
    ``F_M^H W_f F_{N_r} y``. Intended as a cross-check, so ``N_c`` is capped
    at :data:`DENSE_LIMIT`.
    """
    nc, nt, m = bf.precoders.shape
    if nc > DENSE_LIMIT:
        raise ConfigError(f"dense construction limited to N_c <= {DENSE_LIMIT} (got {nc})")
    nr = ch.shape[0]
    h_t = build_block_circulant(ch, nc)
    f_m, f_t, f_r = block_dft(nc, m), block_dft(nc, nt), block_dft(nc, nr)
    p_f = block_diag(bf.precoders)
    w_f = block_diag(eq.filters)
    rx = np.conj(f_m.T) @ w_f @ f_r
    g = rx @ h_t @ np.conj(f_t.T) @ p_f @ f_m
    d = g - np.eye(m * nc)
    return cfg.sigma_s2 * d @ np.conj(d.T) + cfg.sigma_n2 * rx @ np.conj(rx.T)
