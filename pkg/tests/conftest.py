import numpy as np
import pytest
from scipy.signal import fftconvolve

from qdcascade import simulation as sim
from qdcascade import tomography as tomo
from qdcascade.constants import FWHM_PER_SIGMA, SECH2_FWHM_PER_SCALE

GRID = sim.TimeGrid(10.0, 800, -2000.0)
T_EXP = 300.0
SOURCE = sim.SourceModel(p_m=0.00415)
SNSPD = sim.DetectorModel("gaussian", 30.0, 1.0, 1.0)
SPAD = sim.DetectorModel("sech2", 488.0, 34.0, 306.0)


def random_density(rng, n=4):
    """Hilbert-Schmidt distributed density matrix."""
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    r = g @ g.conj().T
    return r / np.trace(r).real


def synth_edge(kind, fwhm=488.0, dt=4.0, peak=1e5, bg=20.0, seed=0, tau_x_ns=0.777):
    """Exponential decay blurred by a sech^2 or Gaussian kernel on a 1 ps grid, then binned."""
    tau = np.arange(-4000.0, 8000.0, dt)
    tf = np.arange(-6000.0, 10000.0, 1.0)
    raw = np.where(tf >= 0, np.exp(-tf / (tau_x_ns * 1e3)), 0.0)
    x = np.arange(-5 * fwhm, 5 * fwhm + 1.0, 1.0)
    if kind == "sech2":
        k = 1 / np.cosh(x / (fwhm / SECH2_FWHM_PER_SCALE)) ** 2
    else:
        k = np.exp(-0.5 * (x / (fwhm / FWHM_PER_SIGMA)) ** 2)
    lam = np.interp(tau, tf, fftconvolve(raw, k / k.sum(), mode="same"))
    lam = peak * lam / lam.max() + bg
    y = lam if seed is None else np.random.default_rng(seed).poisson(lam).astype(float)
    return tau, y


def random_unitary(rng, n=2):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def snspd_hist():
    return sim.expected_histograms(SOURCE, SNSPD, GRID, T_EXP)


@pytest.fixture(scope="session")
def spad_hist():
    return sim.expected_histograms(SOURCE, SPAD, GRID, T_EXP)


@pytest.fixture(scope="session")
def snspd_states(snspd_hist):
    return tomo.time_resolved_states(snspd_hist, 50.0)


@pytest.fixture(scope="session")
def spad_states(spad_hist):
    return tomo.time_resolved_states(spad_hist, 50.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
