"""Physical constants and unit helpers."""

import numpy as np
from scipy import constants as _sc

HBAR_EV_S = _sc.hbar / _sc.e
H_EV_S = _sc.h / _sc.e


def fss_angular_frequency(S_ueV):
    """Angular frequency ``S/hbar`` in rad/s for a splitting given in μeV."""
    return np.asarray(S_ueV, dtype=float) * 1e-6 / HBAR_EV_S


def fss_frequency_mhz(S_ueV):
    """Oscillation frequency ``S/h`` in MHz."""
    return np.asarray(S_ueV, dtype=float) * 1e-6 / H_EV_S / 1e6


def fss_period_ns(S_ueV):
    """Oscillation period ``h/S`` in ns."""
    return 1e3 / fss_frequency_mhz(S_ueV)


def ueV_from_mhz(f_mhz):
    return np.asarray(f_mhz, dtype=float) * 1e6 * H_EV_S * 1e6


FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))
# FWHM of sech^2(t/s) in units of s
SECH2_FWHM_PER_SCALE = 2.0 * np.arccosh(np.sqrt(2.0))
