import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdcascade import qcore
from qdcascade import simulation as sim
from qdcascade.constants import fss_angular_frequency, fss_period_ns

from conftest import GRID, SNSPD, SOURCE, T_EXP

IDEAL = sim.SourceModel()
DELTA = sim.DetectorModel("delta", 0.0, 0.0, 0.0)
T_S_NS = float(fss_period_ns(3.226))


def _linear_inversion(counts36):
    """Least-squares ``A`` with ``counts_k = tr(Pi_k A)`` over all 36 channels."""
    basis = []
    for k in range(16):
        E = np.zeros(16, dtype=complex)
        E[k] = 1
        basis.append(E.reshape(4, 4))
    M = np.array([[np.trace(P @ E) for E in basis] for P in sim._PROJ])
    x, *_ = np.linalg.lstsq(M, counts36.astype(complex), rcond=None)
    return x.reshape(4, 4)


# ---------------------------------------------------------------- model pieces


def test_ideal_pair_density_examples():
    tx = IDEAL.tau_x_ns
    assert sim.ideal_pair_density(0.0, "H", "H", IDEAL) == pytest.approx(0.5 / tx)
    taus = np.linspace(0, 5, 50)
    np.testing.assert_allclose(sim.ideal_pair_density(taus, "H", "V", IDEAL), 0.0, atol=1e-15)
    t = T_S_NS / 4
    assert sim.ideal_pair_density(t, "R", "R", IDEAL) == pytest.approx(0.25 * np.exp(-t / tx) / tx, rel=1e-12)
    assert sim.ideal_pair_density(-0.1, "H", "H", IDEAL) == 0.0


def test_mix_multiphoton():
    phi = qcore.density(qcore.bell_state("Phi+"))
    np.testing.assert_allclose(sim.mix_multiphoton(phi, 0.0), phi)
    np.testing.assert_allclose(sim.mix_multiphoton(phi, 1.0), np.eye(4) / 4)
    c = qcore.concurrence(sim.mix_multiphoton(phi, 0.00415))
    assert c == pytest.approx((3 * (1 - 0.00415) - 1) / 2, abs=1e-12)
    assert c == pytest.approx(0.99378, abs=1e-5)
    with pytest.raises(ValueError):
        sim.mix_multiphoton(phi, 1.5)


def test_dephased_state_limits():
    taus = np.linspace(0, 3, 13)
    rho = sim.dephased_state(taus, IDEAL)
    pure = qcore.density(qcore.cascade_state(taus * 1e-9, IDEAL.S_ueV))
    np.testing.assert_allclose(rho, pure, atol=1e-15)
    far = sim.dephased_state(np.array([1e4]), sim.SourceModel(tau_ss_ns=5.0))[0]
    np.testing.assert_allclose(far, np.eye(4) / 4, atol=1e-12)


def test_dephased_state_spin_scattering_is_werner_like():
    # with tau_hv infinite the state is k' |psi><psi| + (1 - k') I/4, k' = exp(-tau/tau_ss)
    src = sim.SourceModel(tau_ss_ns=25.0)
    rho = sim.dephased_state(np.array([0.777]), src)[0]
    k = np.exp(-0.777 / 25.0)
    assert qcore.concurrence(rho) == pytest.approx((3 * k - 1) / 2, abs=1e-12)
    assert qcore.concurrence(rho) == pytest.approx(0.95410, abs=1e-5)


def test_dephased_state_cross_dephasing_kills_coherence():
    src = sim.SourceModel(tau_hv_ns=0.5)
    rho = sim.dephased_state(np.array([0.0, 100.0]), src)
    assert abs(rho[0, 0, 3]) == pytest.approx(0.5)
    np.testing.assert_allclose(rho[1], np.diag([0.5, 0, 0, 0.5]), atol=1e-12)


pos = st.floats(0.01, 100.0)


@given(st.floats(0, 20), st.floats(0, 1), pos, pos, st.booleans(), st.booleans())
def test_dephased_state_always_valid(tau, p_m, tss, thv, inf_ss, inf_hv):
    src = sim.SourceModel(p_m=p_m, tau_ss_ns=np.inf if inf_ss else tss, tau_hv_ns=np.inf if inf_hv else thv)
    rho = sim.dephased_state(np.array([tau]), src)[0]
    qcore.validate_density(rho)


def test_source_model_validation():
    with pytest.raises(sim.ConfigurationError):
        sim.SourceModel(tau_x_ns=0.0)
    with pytest.raises(sim.ConfigurationError):
        sim.SourceModel(p_m=-0.1)
    with pytest.raises(sim.ConfigurationError):
        sim.SourceModel(tau_ss_ns=0.0)
    with pytest.raises(sim.ConfigurationError):
        sim.DetectorModel("lorentzian")
    with pytest.raises(sim.ConfigurationError):
        sim.DetectorModel(dark_x_hz=-1)


def test_response_kernels_have_requested_fwhm():
    for kind in ("gaussian", "sech2"):
        t, w = sim.response_kernel(sim.DetectorModel(kind, 488.0), 0.5)
        assert w.sum() == pytest.approx(1.0)
        above = t[w >= w.max() / 2]
        assert above.max() - above.min() == pytest.approx(488.0, abs=1.0)
    t, w = sim.response_kernel(DELTA, 10.0)
    assert w.tolist() == [1.0]


# ---------------------------------------------------------------- histograms


def test_count_scales():
    assert sim.pair_count_scale(SOURCE, 300.0) == pytest.approx(145e3 * 150e3 * 300 / 76.2e6)
    assert sim.dark_coincidences_per_ns(SOURCE, SNSPD, 300.0) == pytest.approx((150e3 + 145e3) * 300 / 76.2e6)


def test_delta_response_no_darks_structure():
    h = sim.expected_histograms(IDEAL, DELTA, GRID, T_EXP)
    assert np.all(h.channel("H", "V") == 0)
    assert np.all(h.channel("V", "H") == 0)
    tau = h.tau_ps
    pos = tau > 0
    rect = h.combination(["HH", "HV", "VH", "VV"])
    dt_ns = GRID.bin_width_ps * 1e-3
    n0 = sim.pair_count_scale(IDEAL, T_EXP)
    expected = n0 * np.exp(-tau[pos] * 1e-3 / IDEAL.tau_x_ns) / IDEAL.tau_x_ns * dt_ns
    np.testing.assert_allclose(rect[pos], expected, rtol=1e-12)
    assert np.all(rect[~pos] == 0)


def test_linear_inversion_recovers_pure_state():
    h = sim.expected_histograms(IDEAL, DELTA, GRID, T_EXP)
    n0 = sim.pair_count_scale(IDEAL, T_EXP)
    dt_ns = GRID.bin_width_ps * 1e-3
    for k in range(200, 800, 37):
        tau_ns = h.tau_ps[k] * 1e-3
        scale = n0 * np.exp(-tau_ns / IDEAL.tau_x_ns) / IDEAL.tau_x_ns * dt_ns
        A = _linear_inversion(h.counts[:, k])
        target = scale * qcore.density(qcore.cascade_state(tau_ns * 1e-9, IDEAL.S_ueV))
        assert np.max(np.abs(A - target)) <= 1e-9 * scale


def test_convolution_conserves_counts():
    wide = sim.TimeGrid(10.0, 1400, -4000.0)
    src = sim.SourceModel(p_m=0.00415)
    ref = sim.expected_histograms(src, sim.DetectorModel("delta", 0, 1, 1), wide, T_EXP)
    for det in (SNSPD, sim.DetectorModel("sech2", 488.0, 1.0, 1.0)):
        h = sim.expected_histograms(src, det, wide, T_EXP)
        np.testing.assert_allclose(h.counts.sum(axis=1), ref.counts.sum(axis=1), rtol=1e-6)


def test_dark_floor_order_is_immaterial():
    with_dark = sim.expected_histograms(SOURCE, SNSPD, GRID, T_EXP)
    no_dark = sim.expected_histograms(SOURCE, sim.DetectorModel("gaussian", 30.0, 0.0, 0.0), GRID, T_EXP)
    floor = sim.dark_coincidences_per_ns(SOURCE, SNSPD, T_EXP) * GRID.bin_width_ps * 1e-3
    np.testing.assert_allclose(with_dark.counts - no_dark.counts, floor, rtol=1e-9)


def test_snspd_circular_channels_oscillate_in_quadrature(snspd_hist):
    # RL follows cos^2(S tau / 2 hbar) and RR sin^2: a quarter-period shift of the
    # half-angle, i.e. they oscillate against each other at S/h
    tau = snspd_hist.tau_ps
    sel = (tau > 200) & (tau < 3000)
    rl, rr = snspd_hist.channel("R", "L")[sel], snspd_hist.channel("R", "R")[sel]
    half = 0.5 * fss_angular_frequency(3.226) * tau[sel] * 1e-12
    env = rl + rr
    np.testing.assert_allclose(rl / env, np.cos(half) ** 2, atol=0.03)
    np.testing.assert_allclose(rr / env, np.sin(half) ** 2, atol=0.03)
    spectrum = np.abs(np.fft.rfft((rl - rr) / env, 8192))
    f = np.fft.rfftfreq(8192, 10e-12)
    assert f[np.argmax(spectrum[1:]) + 1] == pytest.approx(780.04e6, rel=0.02)


def test_histograms_non_negative_and_coverage_checks():
    h = sim.expected_histograms(SOURCE, sim.DetectorModel("sech2", 488.0, 34, 306), GRID, T_EXP)
    assert np.all(h.counts >= 0)
    with pytest.raises(sim.ConfigurationError):
        sim.expected_histograms(SOURCE, SNSPD, sim.TimeGrid(20.0, 400, -2000.0), T_EXP)  # 30 ps < 2 bins
    with pytest.raises(sim.ConfigurationError):
        sim.expected_histograms(SOURCE, SNSPD, sim.TimeGrid(10.0, 300, 0.0), T_EXP)
    with pytest.raises(sim.ConfigurationError):
        sim.TimeGrid(0.0, 10)


def test_zero_duration_gives_empty_histograms():
    h = sim.expected_histograms(SOURCE, SNSPD, GRID, 0.0)
    assert h.counts.sum() == 0


# ---------------------------------------------------------------- sampling and I/O


def test_sampling_deterministic_and_concentrated():
    h = sim.expected_histograms(SOURCE, SNSPD, GRID, T_EXP)
    a, b = sim.sample_histograms(h, 7), sim.sample_histograms(h, 7)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, sim.sample_histograms(h, 8).counts)
    zero = sim.CoincidenceHistogramSet(10.0, 0.0, np.zeros((36, 5)))
    assert sim.sample_histograms(zero, 1).counts.sum() == 0
    big = sim.CoincidenceHistogramSet(10.0, 0.0, np.full((36, 100), 1e6))
    dev = np.abs(sim.sample_histograms(big, 3).counts / 1e6 - 1)
    assert np.mean(dev < 0.005) > 0.99


def test_histogram_set_validation():
    with pytest.raises(ValueError):
        sim.CoincidenceHistogramSet(10.0, 0.0, np.zeros((35, 4)))
    with pytest.raises(ValueError):
        sim.CoincidenceHistogramSet(10.0, 0.0, -np.ones((36, 4)))


def test_csv_round_trip(tmp_path, snspd_hist):
    path = tmp_path / "h.csv"
    snspd_hist.to_csv(path)
    back = sim.CoincidenceHistogramSet.from_csv(path)
    np.testing.assert_allclose(back.counts, snspd_hist.counts, rtol=1e-11)
    assert back.bin_width_ps == snspd_hist.bin_width_ps
    assert back.tau_start_ps == snspd_hist.tau_start_ps
    assert back.T_exp_s == T_EXP
    assert back.metadata["detector"]["fwhm_ps"] == 30.0
    header = path.read_text().splitlines()[0].split(",")
    assert header[:4] == ["tau_ps", "HH", "HV", "HD"] and header[-1] == "LL" and len(header) == 37


def test_csv_diagnostics(tmp_path, snspd_hist):
    path = tmp_path / "h.csv"
    snspd_hist.to_csv(path)
    lines = path.read_text().splitlines()
    bad = lines[:3] + [lines[3].rsplit(",", 1)[0]] + lines[4:]
    path.write_text("\n".join(bad))
    with pytest.raises(ValueError, match="row 4: expected 37 columns"):
        sim.CoincidenceHistogramSet.from_csv(path)
    fields = lines[5].split(",")
    fields[7] = "abc"
    path.write_text("\n".join(lines[:5] + [",".join(fields)] + lines[6:]))
    with pytest.raises(ValueError, match="row 6, column 8"):
        sim.CoincidenceHistogramSet.from_csv(path)
    path.write_text("tau,HH\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        sim.CoincidenceHistogramSet.from_csv(path)
