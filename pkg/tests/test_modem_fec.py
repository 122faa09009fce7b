"""64-QAM mapping/demapping and the (104, 83) LDPC code."""

import numpy as np
import pytest

from pnmimo.modem_fec import LdpcCode, Qam64, default_code, qam_demap_llr, qam_map


def exact_llrs(y, nv, qam):
    """Full log-sum-exp LLR oracle (positive = bit 0)."""
    d2 = np.abs(y - qam.points) ** 2 / nv
    labels = np.arange(64)
    out = np.empty(6)
    for b in range(6):
        one = (labels >> (5 - b)) & 1 == 1
        lse = lambda v: -np.log(np.sum(np.exp(-v)))
        out[b] = lse(d2[one]) - lse(d2[~one])
    return out


class TestQam64:
    def test_all_zero_label_is_corner(self):
        qam = Qam64(e_s=1.0)
        sym = qam.map_bits(np.zeros(6, dtype=int))
        assert sym[0] == pytest.approx(qam.scale * (-7 - 7j))

    def test_average_energy_exact(self):
        for e_s in (1.0, 3.5):
            pts = Qam64(e_s).points
            assert np.mean(np.abs(pts) ** 2) == pytest.approx(e_s, rel=1e-12)

    def test_gray_adjacency(self):
        # neighboring amplitude levels differ in exactly one label bit
        qam = Qam64()
        levels = sorted(range(8), key=lambda b: [-7, -5, -1, -3, 7, 5, 1, 3][b])
        for a, b in zip(levels, levels[1:]):
            assert bin(a ^ b).count("1") == 1

    def test_hard_roundtrip_all_labels(self):
        qam = Qam64(e_s=2.0)
        bits = np.array([[int(c) for c in format(i, "06b")] for i in range(64)]).ravel()
        syms = qam.map_bits(bits)
        assert np.array_equal(qam.hard_demap(syms), bits.astype(np.int8))

    def test_llr_signs_on_constellation_points(self):
        qam = Qam64()
        bits = np.array([[int(c) for c in format(i, "06b")] for i in range(64)])
        llrs = qam.demap_llr(qam.points, 1e-3)
        # positive LLR means bit 0: sign pattern must match the labels
        assert np.all((llrs < 0) == (bits == 1))
        assert np.min(np.abs(llrs)) > 10.0

    def test_midpoint_tie_gives_zero(self):
        # halfway between two points differing in exactly one bit
        qam = Qam64()
        a, b = qam.points[0], qam.points[8]  # labels 000000 and 001000
        assert bin(0 ^ 8).count("1") == 1
        llrs = qam.demap_llr(np.array([(a + b) / 2]), 0.5)[0]
        assert llrs[2] == pytest.approx(0.0, abs=1e-12)

    def test_maxlog_close_to_exact(self):
        # Exhaustive grid over the constellation footprint at an
        # operating-point noise variance (per-stream SNR ~ 10 dB).  The
        # max-log deviation grows with the variance; 0.7 is the contract
        # for the regime the demapper actually runs in.
        qam = Qam64()
        nv = 0.1
        grid = np.linspace(-1.4, 1.4, 57)
        ys = (grid[:, None] + 1j * grid[None, :]).ravel()
        approx = qam.demap_llr(ys, nv)
        worst = 0.0
        for i, y in enumerate(ys):
            exact = exact_llrs(y, nv, qam)
            sel = np.abs(exact) < 2.0
            if sel.any():
                worst = max(worst, np.max(np.abs(approx[i, sel] - exact[sel])))
        assert worst < 0.7

    def test_scale_consistency(self, rng):
        y = rng.normal(size=20) + 1j * rng.normal(size=20)
        l1 = qam_demap_llr(y, 0.3)
        l2 = qam_demap_llr(y, 0.6)
        assert np.allclose(l1, 2.0 * l2, rtol=1e-12)

    def test_bad_lengths_and_variance(self):
        with pytest.raises(ValueError):
            qam_map(np.zeros(5, dtype=int))
        with pytest.raises(ValueError):
            qam_demap_llr(np.array([0j]), 0.0)


class TestLdpcCode:
    def test_dimensions_and_rate(self):
        code = default_code()
        assert (code.n, code.k) == (104, 83)
        assert abs(code.rate - 0.8) < 0.005

    def test_all_zero_codeword(self):
        code = default_code()
        assert np.all(code.encode(np.zeros(83, dtype=np.uint8)) == 0)

    def test_random_codewords_zero_syndrome(self, rng):
        code = default_code()
        u = rng.integers(0, 2, size=(83, 64)).astype(np.uint8)
        assert not code.syndrome(code.encode(u)).any()

    def test_generator_consistency(self):
        # single-bit info vectors span the generator; systematic part intact
        code = default_code()
        eye = np.eye(83, dtype=np.uint8)
        g = code.encode(eye)
        assert not code.syndrome(g).any()
        assert np.array_equal(g[:83], eye)

    def test_noiseless_decode_immediate(self, rng):
        code = default_code()
        u = rng.integers(0, 2, size=83).astype(np.uint8)
        llr = 20.0 * (1.0 - 2.0 * code.encode(u).astype(float))
        dec, conv = code.decode(llr)
        assert conv and np.array_equal(dec, u)

    def test_all_zero_llrs_tie_to_zero_bits(self):
        code = default_code()
        dec, conv = code.decode(np.zeros(104))
        assert np.array_equal(dec, np.zeros(83, dtype=np.uint8))
        # all-zero is a valid codeword, so the tie resolves as converged
        assert isinstance(conv, bool)

    def test_nonfinite_llrs_rejected(self):
        with pytest.raises(ValueError):
            default_code().decode(np.full(104, np.inf))

    @pytest.mark.slow
    def test_coded_beats_uncoded_bpsk_6db(self, rng):
        # Monte Carlo with 1e4 codewords at Eb/N0 = 6 dB.
        code = default_code()
        n_cw = 10_000
        ebn0 = 10 ** (6.0 / 10.0)
        u = rng.integers(0, 2, size=(83, n_cw)).astype(np.uint8)
        cw = code.encode(u)
        sigma_c = np.sqrt(1.0 / (2.0 * ebn0 * code.rate))
        y = (1.0 - 2.0 * cw) + sigma_c * rng.normal(size=cw.shape)
        dec, _ = code.decode(2.0 * y / sigma_c**2)
        coded_ber = np.mean(dec != u)
        sigma_u = np.sqrt(1.0 / (2.0 * ebn0))
        yu = (1.0 - 2.0 * u) + sigma_u * rng.normal(size=u.shape)
        uncoded_ber = np.mean((yu < 0) != (u == 1))
        assert coded_ber < uncoded_ber

    def test_high_snr_recovery_probability(self, rng):
        # Es/N0 = 20 dB on BPSK: >= 999/1000 codewords recovered
        code = default_code()
        n_cw = 1000
        esn0 = 10 ** (20.0 / 10.0)
        u = rng.integers(0, 2, size=(83, n_cw)).astype(np.uint8)
        cw = code.encode(u)
        sigma = np.sqrt(1.0 / (2.0 * esn0))
        y = (1.0 - 2.0 * cw) + sigma * rng.normal(size=cw.shape)
        dec, _ = code.decode(2.0 * y / sigma**2)
        ok = np.all(dec == u, axis=0)
        assert np.mean(ok) >= 1.0 - 1e-3

    def test_alist_roundtrip(self, tmp_path):
        code = default_code()
        path = tmp_path / "code.alist"
        code.to_alist(str(path))
        loaded = LdpcCode.from_alist(str(path))
        assert np.array_equal(loaded.h, code.h)

    def test_wrong_info_length(self):
        with pytest.raises(ValueError):
            default_code().encode(np.zeros(80, dtype=np.uint8))
