"""Curve fits and scalar analyses for cascade-source characterization.

Covers Rabi populations, exponential lifetimes, fine-structure oscillations,
blinking side-peak decays, detector timing-response extraction, g2 from HBT
histograms and efficiency bookkeeping. Delays are in ps unless a name says
otherwise.

All nonlinear fits run :func:`scipy.optimize.least_squares` from a fixed,
data-derived grid of starting points and keep the lowest cost, so results are
deterministic for given inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.signal import fftconvolve, savgol_filter

from .constants import FWHM_PER_SIGMA, SECH2_FWHM_PER_SCALE, fss_frequency_mhz, ueV_from_mhz

__all__ = [
    "FitError",
    "UndersampledError",
    "FitResult",
    "EfficiencyBudget",
    "rabi_population",
    "xi_for_pi_population",
    "fit_rabi",
    "fit_lifetime",
    "fss_model",
    "fit_fss",
    "blinking_model",
    "find_rep_peaks",
    "fit_blinking",
    "corrected_g2",
    "g2_from_hbt",
    "sech2",
    "extract_timing_response",
    "combine_jitter",
    "efficiency_budget",
    "load_two_column",
]


class FitError(RuntimeError):
    """A fit could not be carried out or did not converge."""


class UndersampledError(FitError):
    """The feature being fitted is narrower than the sampling allows."""


@dataclass
class FitResult:
    """Outcome of a fit.

    Attributes
    ----------
    params, errors : dict
        Best-fit values and one-sigma standard errors. An error is ``inf``
        when the parameter is not constrained by the data.
    goodness : dict
        ``r_squared`` and ``reduced_chi2``.
    residuals : dict
        ``rms`` and ``max_abs`` of the (weighted) residuals, and ``n``.
    converged : bool
    flags : list of str
        Diagnostic labels such as ``"degenerate"`` or ``"poisson_limit"``.
    """

    params: dict
    errors: dict
    goodness: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    converged: bool = True
    flags: list = field(default_factory=list)
    kind: str = ""

    def __post_init__(self):
        for k, v in self.params.items():
            if not np.isfinite(v):
                raise FitError(f"parameter {k} is not finite")
        for k, v in self.errors.items():
            if not v >= 0:
                self.errors[k] = math.inf

    def to_dict(self, sig: int = 12) -> dict:
        def num(v):
            v = float(v)
            return float(f"{v:.{sig}g}") if np.isfinite(v) else None

        d = asdict(self)
        d["params"] = {k: num(v) for k, v in self.params.items()}
        d["errors"] = {k: num(v) for k, v in self.errors.items()}
        d["goodness"] = {k: num(v) for k, v in self.goodness.items()}
        d["residuals"] = {k: num(v) for k, v in self.residuals.items()}
        return d

    def to_json(self, path=None, sig: int = 12) -> str:
        text = json.dumps(self.to_dict(sig), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class EfficiencyBudget:
    """Pair-source efficiency bookkeeping (all entries are probabilities)."""

    eta_prep_x: float
    eta_prep_xx: float
    eta_blink: float
    eta_nw: float
    eta_opt: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")

    @property
    def eta_int(self) -> float:
        return self.eta_prep_x * self.eta_prep_xx * self.eta_blink

    @property
    def eta_est(self) -> float:
        return self.eta_int * self.eta_nw

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(eta_int=self.eta_int, eta_est=self.eta_est)
        return d


# ---------------------------------------------------------------- helpers


def load_two_column(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x,y`` columns from a CSV file, skipping a non-numeric header."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
    return data[:, 0], data[:, 1]


def _poisson_sigma(y):
    return np.sqrt(np.maximum(np.abs(y), 1.0))


def _deviance_residuals(model, y):
    """Signed Poisson deviance residuals; their sum of squares is the deviance."""
    m = np.maximum(model, 1e-300)
    ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / m), 0.0)
    d = np.maximum(2.0 * (m - y + ylogy), 0.0)
    return np.sign(m - y) * np.sqrt(d)


def _multistart(resid, starts, bounds, names, *, absolute_sigma=True, y=None, w=None, kind=""):
    """Run ``least_squares`` from each start and package the best result."""
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), bounds[0], bounds[1])
        try:
            res = least_squares(resid, x0, bounds=bounds, x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                max_nfev=2000 * len(x0))
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(res.fun)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError(f"{kind or 'fit'}: no start converged")

    n, p = best.fun.size, best.x.size
    dof = max(n - p, 1)
    chi2 = float(2 * best.cost)
    J = best.jac
    try:
        cov = np.linalg.pinv(J.T @ J, rcond=1e-13)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.inf)
    if not absolute_sigma:
        cov = cov * chi2 / dof
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    # parameters pinned at a bound or with a singular direction are unconstrained
    _, sv, vt = np.linalg.svd(J, full_matrices=False)
    if sv.size and sv[-1] < 1e-10 * sv[0]:
        err = np.where(np.abs(vt[-1]) > 1e-3, np.inf, err)
    goodness = {"reduced_chi2": chi2 / dof}
    if y is not None:
        yw = y * (w if w is not None else 1.0)
        ss_tot = float(np.sum((yw - yw.mean()) ** 2))
        goodness["r_squared"] = 1.0 - chi2 / ss_tot if ss_tot > 0 else 0.0
    residuals = {"rms": float(np.sqrt(np.mean(best.fun ** 2))), "max_abs": float(np.max(np.abs(best.fun))), "n": n}
    return FitResult(
        {k: float(v) for k, v in zip(names, best.x)},
        {k: float(v) for k, v in zip(names, err)},
        goodness,
        residuals,
        bool(best.success),
        [],
        kind,
    ), best


# ---------------------------------------------------------------- Rabi


def rabi_population(theta, xi):
    """Excited-state population after a pulse of area ``theta`` with damping ``xi``."""
    theta = np.asarray(theta, dtype=float)
    xi = float(xi)
    if not 0.0 <= xi < 2.0:
        raise ValueError("xi must lie in [0, 2)")
    osc = np.cos(theta) + 3.0 * xi / np.sqrt(4.0 - xi * xi) * np.sin(theta)
    return (1.0 - osc * np.exp(-1.5 * theta * xi)) / (2.0 * (1.0 + 2.0 * xi * xi))


def xi_for_pi_population(pop: float) -> float:
    """Damping that yields population ``pop`` at ``theta = pi``."""
    return float(brentq(lambda x: rabi_population(np.pi, x) - pop, 0.0, 1.0, xtol=1e-14))


def fit_rabi(power, population, sigma=None) -> FitResult:
    """Fit ``population = rabi_population(a * sqrt(power), xi)``.

    Parameters
    ----------
    power : array_like
        Average excitation power (any unit); the pulse area scales with its
        square root.
    population : array_like
    sigma : array_like, optional
        Absolute standard deviations. Unit weights otherwise.

    Returns
    -------
    FitResult
        Parameters ``a`` (pulse area per sqrt(power unit)) and ``xi``.
    """
    power = np.asarray(power, dtype=float)
    y = np.asarray(population, dtype=float)
    if power.size < 8:
        raise FitError("Rabi fit needs at least 8 points")
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    pmax = power.max()
    x = np.sqrt(power / pmax)  # scale-free amplitude axis
    w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else np.ones_like(y)

    def resid(p):
        return (rabi_population(p[0] * x, p[1]) - y) * w

    # the first maximum sits near theta = pi
    a0 = np.pi / max(x[np.argmax(y)], 1e-3)
    starts = [(a0 * f, xi) for f in (0.8, 1.0, 1.25) for xi in (0.02, 0.1, 0.3)]
    fr, best = _multistart(resid, starts, ([1e-6, 0.0], [1e3, 1.9]), ["a", "xi"],
                           absolute_sigma=sigma is not None, y=y, w=w, kind="rabi")
    if fr.params["a"] * x.max() < np.pi:
        fr.flags.append("less_than_one_oscillation")
    scale = 1.0 / np.sqrt(pmax)
    fr.params["a"] *= scale
    fr.errors["a"] *= scale
    if not fr.converged:
        raise FitError("Rabi fit did not converge")
    return fr


# ---------------------------------------------------------------- lifetime


def fit_lifetime(tau_ps, counts, response_fwhm_ps: float = 0.0, *, t_min_ps: float | None = None,
                 sigma=None) -> FitResult:
    """Fit ``A exp(-tau / tau_x)`` to the decaying tail.

    Only ``tau > t_min`` enters, with ``t_min = 2 * response_fwhm_ps`` unless
    given. Without ``sigma`` the counts are fitted by Poisson maximum
    likelihood (deviance residuals).

    Returns
    -------
    FitResult
        ``A`` (counts at tau = 0) and ``tau_x_ns``. A lifetime that runs to
        the upper bound is flagged ``"divergent"`` and not converged.
    """
    tau = np.asarray(tau_ps, dtype=float)
    y = np.asarray(counts, dtype=float)
    if not np.any(y > 0):
        raise FitError("no positive counts")
    t_min = 2.0 * response_fwhm_ps if t_min_ps is None else t_min_ps
    sel = tau > max(t_min, 0.0)
    if sel.sum() < 20:
        raise FitError(f"only {sel.sum()} points beyond t_min={t_min} ps; need 20")
    t, y = tau[sel] * 1e-3, y[sel]
    w = 1.0 / np.asarray(sigma, dtype=float)[sel] if sigma is not None else 1.0 / _poisson_sigma(y)
    span = t.max() - t.min()
    tmax = 1e3 * max(span, 1e-3)

    def resid(p):
        m = p[0] * np.exp(-t / p[1])
        return (m - y) * w if sigma is not None else _deviance_residuals(m, y)

    pos = y > 0
    if pos.sum() >= 2:
        slope = np.polyfit(t[pos], np.log(y[pos]), 1, w=np.sqrt(y[pos]))[0]
        tx0 = -1.0 / slope if slope < 0 else span
    else:
        tx0 = span
    tx0 = float(np.clip(tx0, 1e-3, tmax))
    starts = [(max(y.max(), 1.0) * np.exp(t.min() / (tx0 * f)), tx0 * f) for f in (0.5, 1.0, 2.0)]
    fr, _ = _multistart(resid, starts, ([0.0, 1e-4], [np.inf, tmax]), ["A", "tau_x_ns"], y=y, w=w, kind="lifetime")
    if fr.params["tau_x_ns"] > 10 * span:
        fr.flags.append("divergent")
        fr.converged = False
    return fr


# ---------------------------------------------------------------- fine structure


def _gauss_kernel(fwhm_ps, dt_ps):
    sig = fwhm_ps / FWHM_PER_SIGMA
    half = int(np.ceil(5 * fwhm_ps / dt_ps))
    x = np.arange(-half, half + 1) * dt_ps
    k = np.exp(-0.5 * (x / sig) ** 2)
    return k / k.sum()


def fss_model(tau_ps, S_ueV, amplitude, phase, tau_x_ns, response_fwhm_ps=30.0, oversample: int = 10):
    """``A exp(-tau/tau_x) cos(2 pi f tau + phase)`` for ``tau >= 0``, blurred by a Gaussian.

    The convolution is numerical on a grid ``oversample`` times finer than
    the (uniform) input grid; the result is point-sampled at ``tau_ps``.
    """
    tau = np.asarray(tau_ps, dtype=float)
    f_ghz = fss_frequency_mhz(S_ueV) * 1e-3

    def raw(t):
        return np.where(t >= 0, amplitude * np.exp(-np.clip(t, 0, None) * 1e-3 / tau_x_ns)
                        * np.cos(2 * np.pi * f_ghz * t * 1e-3 + phase), 0.0)

    if response_fwhm_ps <= 0:
        return raw(tau)
    dt = (tau[1] - tau[0]) / oversample if tau.size > 1 else 1.0
    dt = min(dt, response_fwhm_ps / 10)
    pad = 5 * response_fwhm_ps
    # grid aligned on tau = 0 with a half-weight sample at the step (trapezoid rule)
    fine = dt * np.arange(np.floor((tau.min() - pad) / dt), np.ceil((tau.max() + pad) / dt) + 1)
    vals = raw(fine)
    vals[np.abs(fine) < 1e-9 * dt] *= 0.5
    conv = fftconvolve(vals, _gauss_kernel(response_fwhm_ps, dt), mode="same")
    return np.interp(tau, fine, conv)


def fit_fss(tau_ps, circ_comb, response_fwhm_ps: float = 30.0, *, sigma=None, t_min_ps: float | None = None,
            S_guess_ueV: float | None = None) -> FitResult:
    """Fit the circular-basis combination ``RL + LR - RR - LL``.

    Parameters
    ----------
    tau_ps, circ_comb : array_like
        Uniform delay grid and the combination values.
    response_fwhm_ps : float
        FWHM of the fixed Gaussian timing response; 0 disables the blur.
    sigma : array_like, optional
        Absolute standard deviations, e.g. ``sqrt(RL + LR + RR + LL)``.
    t_min_ps : float, optional
        Discard delays below this value.
    S_guess_ueV : float, optional
        Starting splitting; a periodogram peak is used otherwise.

    Returns
    -------
    FitResult
        ``S_ueV``, ``f_mhz``, ``amplitude``, ``phase``, ``tau_x_ns``.
        Flagged ``"degenerate"`` when no oscillation is resolved.
    """
    tau = np.asarray(tau_ps, dtype=float)
    y = np.asarray(circ_comb, dtype=float)
    if t_min_ps is not None:
        keep = tau >= t_min_ps
        tau, y = tau[keep], y[keep]
        sigma = None if sigma is None else np.asarray(sigma, dtype=float)[keep]
    if tau.size < 8:
        raise FitError("too few points for an FSS fit")
    dt = float(np.median(np.diff(tau)))
    w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else np.ones_like(y)

    # starting frequency from the periodogram of the tau >= 0 data
    pos = tau >= 0
    if S_guess_ueV is None:
        seg = y[pos] if pos.sum() >= 8 else y
        nfft = max(8 * seg.size, 4096)
        spec = np.abs(np.fft.rfft(seg * np.hanning(seg.size), nfft))
        freqs = np.fft.rfftfreq(nfft, dt * 1e-3)  # GHz
        spec[(freqs < 2.0 / (seg.size * dt * 1e-3)) | (freqs > 1.0 / (3 * dt * 1e-3))] = 0.0
        f0 = freqs[np.argmax(spec)] * 1e3
        S0 = float(ueV_from_mhz(f0)) if f0 > 0 else 0.0
    else:
        S0 = float(S_guess_ueV)
        if S0 > 0 and 1e6 / fss_frequency_mhz(S0) < 3 * dt:
            raise UndersampledError(f"oscillation period below 3 bins of {dt} ps")
    span_ns = (tau.max() - max(tau.min(), 0.0)) * 1e-3
    amp0 = float(np.max(np.abs(y))) or 1.0

    def resid_quad(p):
        c = fss_model(tau, p[0], 1.0, 0.0, p[3], response_fwhm_ps)
        q = fss_model(tau, p[0], 1.0, np.pi / 2, p[3], response_fwhm_ps)
        return (p[1] * c + p[2] * q - y) * w

    def resid(p):
        return (fss_model(tau, p[0], p[1], p[2], p[3], response_fwhm_ps) - y) * w

    S_hi = float(ueV_from_mhz(1e6 / (3 * dt))) if dt > 0 else 1e3
    tx_hi = 10 * max(span_ns, 0.1)
    # amplitude and phase enter linearly as quadratures, so few starts are needed
    starts = [(max(S0 * f, 1e-6), amp0, 0.0, tx) for f in (1.0, 0.98, 1.02) for tx in (0.5, 1.5)]
    _, bq = _multistart(resid_quad, starts, ([0.0, -np.inf, -np.inf, 1e-3], [S_hi, np.inf, np.inf, tx_hi]),
                         ["S_ueV", "c", "s", "tau_x_ns"], kind="fss")
    S1, c1, s1, tx1 = bq.x
    polar = (S1, float(np.hypot(c1, s1)), float(np.arctan2(s1, c1)), tx1)
    fr, _ = _multistart(resid, [polar], ([0.0, 0.0, -4 * np.pi, 1e-3], [S_hi, np.inf, 4 * np.pi, tx_hi]),
                        ["S_ueV", "amplitude", "phase", "tau_x_ns"],
                        absolute_sigma=sigma is not None, y=y, w=w, kind="fss")
    fr.params["phase"] = float(np.mod(fr.params["phase"], 2 * np.pi))
    fr.params["f_mhz"] = float(fss_frequency_mhz(fr.params["S_ueV"]))
    fr.errors["f_mhz"] = float(fss_frequency_mhz(fr.errors["S_ueV"])) if np.isfinite(fr.errors["S_ueV"]) else math.inf
    if fr.params["S_ueV"] >= S_hi * (1 - 1e-6):
        raise UndersampledError(f"fitted period below 3 bins of {dt} ps")
    # an oscillation is resolved only if the amplitude is significant and
    # at least one period fits inside the data
    amp_sig = fr.params["amplitude"] / fr.errors["amplitude"] if fr.errors["amplitude"] > 0 else np.inf
    period_ns = 1e3 / fr.params["f_mhz"] if fr.params["f_mhz"] > 0 else np.inf
    if amp_sig < 3 or period_ns > span_ns or not np.isfinite(fr.errors["S_ueV"]):
        fr.flags.append("degenerate")
    return fr


# ---------------------------------------------------------------- blinking


def blinking_model(tau_ns, beta, tau_b_ns, A_P):
    """Side-peak heights of a telegraph-blinking emitter."""
    tau = np.asarray(tau_ns, dtype=float)
    return A_P * (1.0 + (1.0 - beta) / beta * np.exp(-np.abs(tau) / tau_b_ns))


def find_rep_peaks(tau_ns, counts, period_ns, *, tolerance: float = 0.1, include_zero: bool = False):
    """Local maxima within ``±tolerance * period`` of each multiple of the period.

    Returns
    -------
    tau_k, heights : ndarray
        Peak positions and heights, ordered by delay.
    """
    tau = np.asarray(tau_ns, dtype=float)
    y = np.asarray(counts, dtype=float)
    kmin, kmax = int(np.ceil(tau.min() / period_ns)), int(np.floor(tau.max() / period_ns))
    tk, hk = [], []
    for k in range(kmin, kmax + 1):
        if k == 0 and not include_zero:
            continue
        sel = np.abs(tau - k * period_ns) <= tolerance * period_ns
        if not sel.any():
            continue
        i = np.flatnonzero(sel)[np.argmax(y[sel])]
        tk.append(tau[i])
        hk.append(y[i])
    return np.array(tk), np.array(hk)


def fit_blinking(tau_ns, heights, sigma=None) -> FitResult:
    """Fit side-peak heights ``A_P (1 + (1 - beta)/beta exp(-|tau|/tau_b))``.

    Returns
    -------
    FitResult
        ``beta``, ``tau_b_ns``, ``A_P`` plus derived ``inv_tau_b_mhz``. When
        the bunching amplitude is insignificant the result is flagged
        ``"poisson_limit"`` and ``beta`` is reported as 1.
    """
    tau = np.abs(np.asarray(tau_ns, dtype=float))
    y = np.asarray(heights, dtype=float)
    if np.any(tau == 0):
        raise ValueError("the zero-delay peak must be excluded")
    if tau.size < 10:
        raise FitError("need at least 10 side peaks")
    w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else 1.0 / _poisson_sigma(y)

    def resid(p):
        m = blinking_model(tau, p[0], p[1], p[2])
        return (m - y) * w if sigma is not None else _deviance_residuals(m, y)

    order = np.argsort(tau)
    tail = y[order][-max(3, tau.size // 5):]
    A0 = float(np.median(tail))
    c0 = max(y[order][0] / A0 - 1.0, 1e-3)
    span = tau.max()
    starts = [(1.0 / (1.0 + c0 * f), tb, A0) for f in (1.0, 1.5) for tb in (0.05 * span, 0.2 * span, span)]
    fr, _ = _multistart(resid, starts, ([1e-4, 1e-6, 0.0], [1.0, 100 * span, np.inf]),
                        ["beta", "tau_b_ns", "A_P"], y=y, w=w, kind="blinking")
    beta, eb = fr.params["beta"], fr.errors["beta"]
    bunch = (1 - beta) / beta
    # no bunching, or a decay too slow to separate from the baseline
    flat = beta > 1 - 1e-6 or fr.params["tau_b_ns"] > 10 * span or np.allclose(y, y[0])
    if flat or (np.isfinite(eb) and bunch < 2 * eb / beta**2):
        fr.flags.append("poisson_limit")
        fr.params["beta"] = 1.0
        fr.params["A_P"] = float(np.average(y, weights=w**2))
        fr.errors["tau_b_ns"] = math.inf
    fr.params["inv_tau_b_mhz"] = 1e3 / fr.params["tau_b_ns"]
    fr.errors["inv_tau_b_mhz"] = fr.params["inv_tau_b_mhz"] * fr.errors["tau_b_ns"] / fr.params["tau_b_ns"]
    return fr


def corrected_g2(g2_nn: float, beta: float) -> float:
    """Blinking-corrected ``g2(0) = g2_nn / beta``."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    return float(g2_nn) / beta


def g2_from_hbt(tau_ns, counts, rep_period_ns: float) -> tuple[float, dict]:
    """Zero-delay g2 against the two nearest side peaks.

    Each peak is integrated over ``±rep_period/2`` around its nominal
    position.

    Returns
    -------
    g2 : float
    areas : dict
        Integrated area for each peak index ``k``.
    """
    tau = np.asarray(tau_ns, dtype=float)
    y = np.asarray(counts, dtype=float)
    T = float(rep_period_ns)
    areas = {}
    for k in range(int(np.ceil(tau.min() / T)), int(np.floor(tau.max() / T)) + 1):
        sel = (tau >= (k - 0.5) * T) & (tau < (k + 0.5) * T)
        if sel.any():
            areas[k] = float(y[sel].sum())
    n_neg = sum(1 for k in areas if k < 0)
    n_pos = sum(1 for k in areas if k > 0)
    if 0 not in areas or n_neg < 3 or n_pos < 3:
        raise FitError("histogram must contain the central peak and 3 side peaks on each side")
    side = 0.5 * (areas[-1] + areas[1])
    if side <= 0:
        raise FitError("nearest side peaks are empty")
    return areas[0] / side, areas


# ---------------------------------------------------------------- timing response


def sech2(t, t0, A, s):
    return A / np.cosh((np.asarray(t, dtype=float) - t0) / s) ** 2


def _gauss(t, t0, A, s):
    return A * np.exp(-0.5 * ((np.asarray(t, dtype=float) - t0) / s) ** 2)


FIT_SPAN_FWHM = 3.0


def _rise_bins(y):
    """10-90 % rise of the leading edge, in bins."""
    top = y.max()
    i90 = int(np.argmax(y >= 0.9 * top))
    below = np.flatnonzero(y[: i90 + 1] < 0.1 * top)
    i10 = int(below[-1]) + 1 if below.size else 0
    return i90 - i10


def extract_timing_response(tau_ps, counts, *, window: int = 65, polyorder: int = 6,
                            tau_x_ns: float | None = None, deconvolve_decay: bool = True) -> FitResult:
    """Recover the detection timing response from the rising edge of ``HH+VV``.

    The histogram is Savitzky-Golay smoothed and differentiated. For an
    exponential decay blurred by a kernel ``g``, ``f' + f / tau_x = A g``
    exactly, so the decay term is added back unless ``deconvolve_decay`` is
    false (``tau_x`` comes from a tail fit when not given). The ``t <= 0``
    branch is mirrored about zero and fitted with ``A sech^2((t - t0)/s)``;
    a Gaussian is fitted to the same points for comparison.

    Returns
    -------
    FitResult
        ``t0``, ``A``, ``sigma`` (the sech^2 scale, ps) and ``fwhm_ps``;
        ``goodness`` carries ``r_squared`` plus ``r_squared_gauss`` and
        ``fwhm_gauss_ps``.
    """
    tau = np.asarray(tau_ps, dtype=float)
    y = np.asarray(counts, dtype=float)
    dt = float(np.median(np.diff(tau)))
    head = tau < tau.min() + 0.1 * (tau.max() - tau.min())
    bg = float(np.median(y[head])) if head.sum() >= 3 else 0.0
    yb = y - bg
    rise = _rise_bins(yb)
    if rise < 3:
        raise UndersampledError(f"rising edge spans {rise} bins; at least 3 needed")

    ys = savgol_filter(yb, window, polyorder)
    g = savgol_filter(yb, window, polyorder, deriv=1, delta=dt)
    if deconvolve_decay:
        if tau_x_ns is None:
            t_peak = tau[np.argmax(ys)]
            lt = fit_lifetime(tau, yb, t_min_ps=t_peak + 2 * rise * dt)
            tau_x_ns = lt.params["tau_x_ns"]
        g = g + ys / (tau_x_ns * 1e3)

    # keep the t <= 0 branch where the response is above the noise floor
    fwhm0 = max(2 * rise * dt, 3 * dt)
    neg = (tau <= 0) & (tau >= -FIT_SPAN_FWHM * fwhm0)
    t = np.concatenate([tau[neg], -tau[neg & (tau < 0)]])
    v = np.concatenate([g[neg], g[neg & (tau < 0)]])
    A0 = float(v.max())
    w = np.ones_like(v)

    names = ["t0", "A", "sigma"]
    s_sech0 = fwhm0 / SECH2_FWHM_PER_SCALE
    s_gau0 = fwhm0 / FWHM_PER_SIGMA

    def r_sech(p):
        return sech2(t, *p) - v

    def r_gau(p):
        return _gauss(t, *p) - v

    bounds = ([-np.inf, 0.0, 1e-3], [np.inf, np.inf, np.inf])
    fr, _ = _multistart(r_sech, [(0.0, A0, s_sech0 * f) for f in (0.5, 1.0, 2.0)], bounds, names,
                        absolute_sigma=False, y=v, w=w, kind="timing")
    fg, _ = _multistart(r_gau, [(0.0, A0, s_gau0 * f) for f in (0.5, 1.0, 2.0)], bounds, names,
                        absolute_sigma=False, y=v, w=w, kind="timing_gauss")
    fr.params["fwhm_ps"] = fr.params["sigma"] * SECH2_FWHM_PER_SCALE
    fr.errors["fwhm_ps"] = fr.errors["sigma"] * SECH2_FWHM_PER_SCALE
    fr.goodness["r_squared_gauss"] = fg.goodness["r_squared"]
    fr.goodness["fwhm_gauss_ps"] = fg.params["sigma"] * FWHM_PER_SIGMA
    if rise < 10:
        fr.flags.append("edge_below_10_bins")
    return fr


# ---------------------------------------------------------------- scalar analyses


def combine_jitter(*components) -> float:
    """Root-sum-square of independent timing-jitter FWHMs (ps)."""
    if len(components) == 1 and np.ndim(components[0]) == 1:
        components = tuple(components[0])
    c = np.asarray(components, dtype=float)
    if np.any(c < 0):
        raise ValueError("jitter components must be non-negative")
    return float(np.sqrt(np.sum(c**2)))


def efficiency_budget(eta_prep_x: float, eta_prep_xx: float, beta: float, n_x_hz: float, n_xx_hz: float,
                      eta_opt: float, f_rep_hz: float) -> EfficiencyBudget:
    """Collect internal and external efficiencies.

    ``eta_nw = N_X N_XX / (eta_opt f_rep)^2``; with directly measured pair
    rates and the same formula this is the pair extraction at the first lens.
    """
    if eta_opt <= 0 or f_rep_hz <= 0:
        raise ZeroDivisionError("eta_opt and f_rep must be positive")
    cap = eta_opt * f_rep_hz
    if n_x_hz > cap or n_xx_hz > cap:
        raise ValueError("detected rates exceed eta_opt * f_rep")
    eta_nw = n_x_hz * n_xx_hz / cap**2
    return EfficiencyBudget(eta_prep_x, eta_prep_xx, beta, eta_nw, eta_opt)
