import numpy as np
import pytest
from hypothesis import given, strategies as st

from scfde_txbf.channel import (FrequencyDomainChannel, PowerDelayProfile, SystemConfig,
                                TimeDomainChannel, decompose, generate_channel,
                                to_frequency_domain)
from scfde_txbf.equalizer import (BeamformerSet, EqualizerSet, dense_mse_matrix, mmse_filter,
                                  mse_matrix, psi_k, stream_mse)
from scfde_txbf.errors import ConfigError
from scfde_txbf.optimizer import (Criterion, CriterionKind, PowerAllocation,
                                  assemble_beamformer)
from oracles import dense_error_covariance

UNIT = SystemConfig(n_tx=1, n_rx=1, n_streams=1, block_len=1, cir_len=1, cp_len=1,
                    sigma_s2=1.0, sigma_n2=1.0, power_budget=1.0)


def cplx(r, *shape):
    return r.standard_normal(shape) + 1j * r.standard_normal(shape)


def random_link(seed, n_c=8, cir=3, snr=6.0, nt=2, nr=2, m=2):
    cfg = SystemConfig(n_tx=nt, n_rx=nr, n_streams=m, block_len=n_c, cir_len=cir,
                       cp_len=cir, power_budget=float(m * n_c)).with_snr_db(snr)
    ch = generate_channel(cfg, PowerDelayProfile(2.0, cir), seed)
    fd = to_frequency_domain(ch, n_c)
    return cfg, ch, fd


def error_trace(fd, bf, w, cfg):
    # tr(Ê) for an arbitrary filter, per subcarrier
    hp = fd.subcarriers @ bf.precoders
    m = bf.n_streams
    d = w @ hp - np.eye(m)
    e = cfg.sigma_s2 * d @ np.conj(np.swapaxes(d, 1, 2)) \
        + cfg.sigma_n2 * w @ np.conj(np.swapaxes(w, 1, 2))
    return float(np.real(np.trace(e, axis1=1, axis2=2)).mean())


class TestPsi:
    def test_zero_power(self, rng):
        psi = psi_k(cplx(rng, 3, 2), np.zeros((2, 2)), UNIT)
        np.testing.assert_array_equal(psi, np.eye(2))

    def test_scalar(self):
        p = 2.5
        assert psi_k(np.ones((1, 1)), np.sqrt(p) * np.ones((1, 1)), UNIT)[0, 0] == pytest.approx(1 + p)

    @given(seed=st.integers(0, 2 ** 31))
    def test_hermitian_and_eigs_at_least_one(self, seed):
        r = np.random.default_rng(seed)
        cfg = SystemConfig(sigma_n2=0.3)
        psi = psi_k(cplx(r, 2, 2), cplx(r, 2, 2), cfg)
        assert np.abs(psi - psi.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(psi).min() >= 1 - 1e-12


class TestFilter:
    def test_zero_power(self, rng):
        fd = FrequencyDomainChannel(cplx(rng, 4, 2, 2))
        eq = mmse_filter(fd, BeamformerSet.unstructured(np.zeros((4, 2, 2))), SystemConfig())
        np.testing.assert_array_equal(eq.filters, 0)

    def test_scalar(self):
        fd = FrequencyDomainChannel(np.ones((1, 1, 1)))
        eq = mmse_filter(fd, BeamformerSet.unstructured(np.ones((1, 1, 1))), UNIT)
        assert eq.filters[0, 0, 0] == pytest.approx(0.5)

    def test_closed_form_with_noise_scaling(self, rng):
        # σn² ≠ 1: W = (σs²/σn²)·Ψ⁻¹P^H H^H
        cfg = SystemConfig(sigma_s2=2.0, sigma_n2=0.7)
        h, p = cplx(rng, 5, 2, 2), cplx(rng, 5, 2, 2)
        eq = mmse_filter(FrequencyDomainChannel(h), BeamformerSet.unstructured(p), cfg)
        for k in range(5):
            hp = h[k] @ p[k]
            psi = cfg.sigma_s2 / cfg.sigma_n2 * hp.conj().T @ hp + np.eye(2)
            w = cfg.sigma_s2 / cfg.sigma_n2 * np.linalg.solve(psi, hp.conj().T)
            np.testing.assert_allclose(eq.filters[k], w, atol=1e-12)

    def test_perturbations_increase_error(self, rng):
        cfg, _, fd = random_link(4)
        bf = BeamformerSet.unstructured(cplx(rng, 8, 2, 2))
        w = mmse_filter(fd, bf, cfg).filters
        base = error_trace(fd, bf, w, cfg)
        for _ in range(100):
            assert error_trace(fd, bf, w + 1e-3 * cplx(rng, *w.shape), cfg) > base

    def test_optimal_against_random_filters(self, rng):
        for case in range(100):
            cfg, _, fd = random_link(case, n_c=4, cir=2)
            bf = BeamformerSet.unstructured(cplx(rng, 4, 2, 2))
            best = error_trace(fd, bf, mmse_filter(fd, bf, cfg).filters, cfg)
            for _ in range(100):
                assert error_trace(fd, bf, cplx(rng, 4, 2, 2), cfg) >= best

    def test_error_covariance_equals_scaled_psi_inverse(self, rng):
        cfg, _, fd = random_link(2, snr=3.0)
        bf = BeamformerSet.unstructured(cplx(rng, 8, 2, 2))
        w = mmse_filter(fd, bf, cfg).filters
        assert error_trace(fd, bf, w, cfg) == pytest.approx(
            float(np.real(np.trace(mse_matrix(fd, bf, cfg)))), rel=1e-12)


class TestStreamMse:
    def test_zero_power(self, rng):
        cfg = SystemConfig(sigma_s2=1.7)
        fd = FrequencyDomainChannel(cplx(rng, 4, 2, 2))
        mse = stream_mse(fd, BeamformerSet.unstructured(np.zeros((4, 2, 2))), cfg)
        np.testing.assert_allclose(mse.values, 1.7)

    def test_scalar(self):
        fd = FrequencyDomainChannel(np.ones((1, 1, 1)))
        assert stream_mse(fd, BeamformerSet.unstructured(np.ones((1, 1, 1))), UNIT).values[0] \
            == pytest.approx(0.5)

    @pytest.mark.parametrize("kind", [CriterionKind.AMSE, CriterionKind.MAXMSE])
    def test_fast_matches_general(self, kind, rng):
        cfg, _, fd = random_link(11, n_c=16, cir=4)
        svd = decompose(fd, 2)
        alloc = PowerAllocation(rng.exponential(size=(16, 2)))
        bf = assemble_beamformer(svd, alloc, Criterion(kind))
        fast = stream_mse(fd, bf, cfg, path="fast").values
        general = stream_mse(fd, bf, cfg, path="general").values
        np.testing.assert_allclose(fast, general, rtol=1e-10)

    def test_concave_structure_diagonalises(self, rng):
        cfg, _, fd = random_link(5)
        svd = decompose(fd, 2)
        bf = assemble_beamformer(svd, PowerAllocation(rng.exponential(size=(8, 2))),
                                 Criterion(CriterionKind.GMSE))
        e = mse_matrix(fd, bf, cfg)
        assert abs(e[0, 1]) < 1e-9 * cfg.sigma_s2

    def test_bounds(self, rng):
        for seed in range(20):
            cfg, _, fd = random_link(seed)
            svd = decompose(fd, 2)
            p = rng.exponential(size=(8, 2))
            bf = assemble_beamformer(svd, PowerAllocation(p), Criterion(CriterionKind.AMSE))
            mse = stream_mse(fd, bf, cfg, path="general").values
            lower = cfg.sigma_s2 / (1 + cfg.sigma_s2 / cfg.sigma_n2 * p.max() * svd.gains.max())
            assert np.all(mse <= cfg.sigma_s2) and np.all(mse >= lower)

    def test_more_power_never_hurts(self, rng):
        cfg, _, fd = random_link(8)
        svd = decompose(fd, 2)
        p = rng.exponential(size=(8, 2))
        c = Criterion(CriterionKind.AMSE)
        lo = stream_mse(fd, assemble_beamformer(svd, PowerAllocation(p), c), cfg).values
        hi = stream_mse(fd, assemble_beamformer(svd, PowerAllocation(1.5 * p), c), cfg).values
        assert np.all(hi <= lo)

    def test_unknown_path(self, rng):
        cfg, _, fd = random_link(0)
        with pytest.raises(ValueError):
            stream_mse(fd, BeamformerSet.unstructured(cplx(rng, 8, 2, 2)), cfg, path="slow")


class TestDense:
    def test_zero_filter(self, rng):
        cfg, ch, _ = random_link(1, n_c=4, cir=2)
        bf = BeamformerSet.unstructured(cplx(rng, 4, 2, 2))
        e = dense_mse_matrix(ch, bf, EqualizerSet(np.zeros((4, 2, 2))), cfg)
        np.testing.assert_allclose(e, cfg.sigma_s2 * np.eye(8), atol=1e-14)

    @pytest.mark.parametrize("n_c", [2, 4, 8])
    def test_blocks_equal_and_match_frequency_formula(self, n_c, rng):
        cfg, ch, fd = random_link(n_c, n_c=n_c, cir=2)
        svd = decompose(fd, 2)
        bf = assemble_beamformer(svd, PowerAllocation(rng.exponential(size=(n_c, 2))),
                                 Criterion(CriterionKind.HSINR))
        eq = mmse_filter(fd, bf, cfg)
        e = dense_mse_matrix(ch, bf, eq, cfg)
        hat = mse_matrix(fd, bf, cfg)
        for k in range(n_c):
            np.testing.assert_allclose(e[2 * k:2 * k + 2, 2 * k:2 * k + 2], hat, atol=1e-10)
        # independent construction from an explicit convolution matrix
        ref = dense_error_covariance(ch.taps, bf.precoders, eq.filters, cfg.sigma_s2, cfg.sigma_n2)
        assert np.abs(e - ref).max() < 1e-10 * np.abs(ref).max()

    def test_size_limit(self, rng):
        cfg, ch, fd = random_link(0, n_c=64, cir=3)
        bf = BeamformerSet.unstructured(cplx(rng, 64, 2, 2))
        with pytest.raises(ConfigError):
            dense_mse_matrix(ch, bf, mmse_filter(fd, bf, cfg), cfg)
