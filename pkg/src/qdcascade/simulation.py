"""Forward model of time-resolved polarization coincidence histograms.

The pair state emitted by the cascade is propagated through multiphoton
background, optional spin dephasing, dark counts and the detection-system
timing response to give the expected counts of all 36 projective
measurements.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import qcore
from .constants import FWHM_PER_SIGMA, SECH2_FWHM_PER_SCALE

__all__ = [
    "ConfigurationError",
    "CHANNELS",
    "SourceModel",
    "DetectorModel",
    "TimeGrid",
    "CoincidenceHistogramSet",
    "ideal_pair_density",
    "dephased_state",
    "mix_multiphoton",
    "pair_count_scale",
    "dark_coincidences_per_ns",
    "response_kernel",
    "expected_histograms",
    "sample_histograms",
]

CHANNELS = [(i, j) for i in qcore.LABELS for j in qcore.LABELS]
_CHANNEL_INDEX = {c: k for k, c in enumerate(CHANNELS)}
_PROJ = np.stack([qcore.projector(i, j) for i, j in CHANNELS])


class ConfigurationError(ValueError):
    """Invalid combination of model, detector and grid settings."""


@dataclass(frozen=True)
class SourceModel:
    """Cascade source parameters.

    Times are in ns, rates in counts/s, ``f_rep_mhz`` in MHz and the
    fine-structure splitting ``S_ueV`` in μeV. Dephasing times default to
    infinity (dephasing-free source).
    """

    S_ueV: float = 3.226
    tau_x_ns: float = 0.777
    p_m: float = 0.0
    n_x_hz: float = 145e3
    n_xx_hz: float = 150e3
    f_rep_mhz: float = 76.2
    beta: float = 1.0
    tau_ss_ns: float = float("inf")
    tau_hv_ns: float = float("inf")

    def __post_init__(self):
        if not self.tau_x_ns > 0:
            raise ConfigurationError("tau_x_ns must be positive")
        if not 0.0 <= self.p_m <= 1.0:
            raise ConfigurationError("p_m must lie in [0, 1]")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError("beta must lie in (0, 1]")
        if min(self.n_x_hz, self.n_xx_hz) < 0 or not self.f_rep_mhz > 0:
            raise ConfigurationError("rates must be non-negative and f_rep positive")
        if not (self.tau_ss_ns > 0 and self.tau_hv_ns > 0):
            raise ConfigurationError("dephasing times must be positive or infinite")


@dataclass(frozen=True)
class DetectorModel:
    """Detection system: timing response and per-arm dark count rates.

    ``fwhm_ps`` is the full width at half maximum of the response for both
    the ``gaussian`` and ``sech2`` kinds and is ignored for ``delta``.
    """

    response: str = "gaussian"
    fwhm_ps: float = 30.0
    dark_x_hz: float = 1.0
    dark_xx_hz: float = 1.0

    def __post_init__(self):
        if self.response not in ("gaussian", "sech2", "delta"):
            raise ConfigurationError(f"unknown response kind {self.response!r}")
        if self.fwhm_ps < 0 or self.dark_x_hz < 0 or self.dark_xx_hz < 0:
            raise ConfigurationError("width and dark rates must be non-negative")


@dataclass(frozen=True)
class TimeGrid:
    """Histogram binning: ``n_bins`` bins of ``bin_width_ps`` starting at ``tau_start_ps``."""

    bin_width_ps: float
    n_bins: int
    tau_start_ps: float = 0.0

    def __post_init__(self):
        if not self.bin_width_ps > 0 or self.n_bins < 1:
            raise ConfigurationError("bin width must be positive and n_bins >= 1")

    @property
    def centers_ps(self) -> np.ndarray:
        return self.tau_start_ps + self.bin_width_ps * (np.arange(self.n_bins) + 0.5)

    @property
    def tau_end_ps(self) -> float:
        return self.tau_start_ps + self.n_bins * self.bin_width_ps


@dataclass
class CoincidenceHistogramSet:
    """Coincidence counts of the 36 projective measurements versus delay.

    ``counts`` has shape ``(36, n_bins)`` with rows in :data:`CHANNELS` order
    (HH, HV, HD, ..., LL). Bin ``k`` covers
    ``[tau_start_ps + k*bin_width_ps, tau_start_ps + (k+1)*bin_width_ps)``.
    """

    bin_width_ps: float
    tau_start_ps: float
    counts: np.ndarray
    T_exp_s: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 2 or self.counts.shape[0] != 36:
            raise ValueError(f"counts must have shape (36, n_bins), got {self.counts.shape}")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("counts must be finite and non-negative")

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.bin_width_ps, self.n_bins, self.tau_start_ps)

    @property
    def tau_ps(self) -> np.ndarray:
        return self.grid.centers_ps

    def channel(self, i: str, j: str) -> np.ndarray:
        return self.counts[_CHANNEL_INDEX[(i, j)]]

    def combination(self, plus, minus=()) -> np.ndarray:
        """Sum of the ``plus`` channels minus the ``minus`` channels, e.g. ``["RL", "LR"]``."""
        out = np.zeros(self.n_bins)
        for c in plus:
            out += self.channel(c[0], c[1])
        for c in minus:
            out -= self.channel(c[0], c[1])
        return out

    def to_csv(self, path, sig: int = 12) -> None:
        """Write ``tau_ps`` plus the 36 channels, and a JSON sidecar with the metadata."""
        path = Path(path)
        header = ",".join(["tau_ps"] + [i + j for i, j in CHANNELS])
        data = np.column_stack([self.tau_ps, self.counts.T])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=f"%.{sig}g")
        sidecar = {
            "bin_width_ps": self.bin_width_ps,
            "tau_start_ps": self.tau_start_ps,
            "T_exp_s": self.T_exp_s,
            **self.metadata,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "CoincidenceHistogramSet":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in lines[0].split(",")]
        expected = ["tau_ps"] + [i + j for i, j in CHANNELS]
        if header != expected:
            raise ValueError(f"{path}: row 1: header must be {','.join(expected)}")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split(",")
            if len(fields) != 37:
                raise ValueError(f"{path}: row {lineno}: expected 37 columns, got {len(fields)}")
            try:
                rows.append([float(x) for x in fields])
            except ValueError as exc:
                col = next(k + 1 for k, x in enumerate(fields) if not _is_float(x))
                raise ValueError(f"{path}: row {lineno}, column {col}: {exc}") from None
        data = np.array(rows, dtype=float).reshape(-1, 37)
        meta = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
        tau = data[:, 0]
        if "bin_width_ps" in meta:
            width = float(meta.pop("bin_width_ps"))
        elif len(tau) > 1:
            width = float(tau[1] - tau[0])
        else:
            raise ValueError(f"{path}: cannot infer bin width from a single row without sidecar")
        start = float(meta.pop("tau_start_ps", tau[0] - width / 2 if len(tau) else 0.0))
        T_exp = float(meta.pop("T_exp_s", 0.0))
        return cls(width, start, data[:, 1:].T.copy(), T_exp, meta)


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def ideal_pair_density(tau_ns, i: str, j: str, source: SourceModel):
    """Probability density (1/ns) of a coincidence in channel ``ij`` at delay ``tau_ns``.

    ``|<ij|psi(tau)>|^2 exp(-tau/tau_X) / tau_X`` for ``tau >= 0`` and zero before.
    """
    tau_ns = np.asarray(tau_ns, dtype=float)
    psi = qcore.cascade_state(tau_ns * 1e-9, source.S_ueV)
    ket = np.kron(qcore.jones(i), qcore.jones(j))
    overlap = np.abs(psi @ ket.conj()) ** 2
    decay = np.exp(-np.clip(tau_ns, 0, None) / source.tau_x_ns) / source.tau_x_ns
    return np.where(tau_ns >= 0, overlap * decay, 0.0)


def mix_multiphoton(rho, p_m: float) -> np.ndarray:
    """``(1 - p_m) rho + p_m I/4``."""
    if not 0.0 <= p_m <= 1.0:
        raise ValueError("p_m must lie in [0, 1]")
    return (1.0 - p_m) * np.asarray(rho, dtype=complex) + p_m * np.eye(4) / 4


_RHO_HV = np.diag([0.5, 0.0, 0.0, 0.5]).astype(complex)


def dephased_state(tau_ns, source: SourceModel) -> np.ndarray:
    """Pair density matrix including multiphoton background and spin dephasing.

    Spin scattering (time ``tau_ss_ns``) mixes in ``I/4``; cross dephasing
    (``tau_hv_ns``) mixes in the incoherent ``(|HH><HH| + |VV><VV|)/2``.
    Negative delays are clamped to zero.
    """
    tau_ns = np.clip(np.asarray(tau_ns, dtype=float), 0.0, None)
    k = 1.0 - source.p_m
    ss = np.exp(-tau_ns / source.tau_ss_ns)
    hv = np.exp(-tau_ns / source.tau_hv_ns)
    pure = qcore.density(qcore.cascade_state(tau_ns * 1e-9, source.S_ueV))
    a = (k * ss * hv)[..., None, None]
    b = (1.0 - k * ss)[..., None, None]
    c = (k * ss * (1.0 - hv))[..., None, None]
    return a * pure + b * np.eye(4) / 4 + c * _RHO_HV


def pair_count_scale(source: SourceModel, T_exp_s: float) -> float:
    """Expected pair coincidences per measurement setting, ``N_X N_XX T_exp / f_rep``."""
    return source.n_x_hz * source.n_xx_hz * T_exp_s / (source.f_rep_mhz * 1e6)


def dark_coincidences_per_ns(source: SourceModel, det: DetectorModel, T_exp_s: float) -> float:
    """Accidental dark-count coincidences per ns of delay in one channel.

    ``(N_XX d_X + N_X d_XX) T_exp / f_rep`` per ns of delay: the same
    prefactor as the pair scale with delays measured in ns.
    """
    rate = source.n_xx_hz * det.dark_x_hz + source.n_x_hz * det.dark_xx_hz
    return rate * T_exp_s / (source.f_rep_mhz * 1e6)


def response_kernel(det: DetectorModel, dt_ps: float, half_width_ps: float | None = None):
    """Normalized timing-response kernel sampled every ``dt_ps``.

    Returns ``(t_ps, weights)`` with an odd number of samples centred on zero.
    """
    if det.response == "delta" or det.fwhm_ps == 0:
        return np.zeros(1), np.ones(1)
    if half_width_ps is None:
        half_width_ps = 5.0 * det.fwhm_ps
    n = int(np.ceil(half_width_ps / dt_ps))
    t = dt_ps * np.arange(-n, n + 1)
    if det.response == "gaussian":
        sigma = det.fwhm_ps / FWHM_PER_SIGMA
        w = np.exp(-0.5 * (t / sigma) ** 2)
    else:
        s = det.fwhm_ps / SECH2_FWHM_PER_SCALE
        w = 1.0 / np.cosh(t / s) ** 2
    return t, w / w.sum()


def expected_histograms(
    source: SourceModel,
    det: DetectorModel,
    grid: TimeGrid,
    T_exp_s: float,
    *,
    check_coverage: bool = True,
) -> CoincidenceHistogramSet:
    """Expected (noise-free) coincidence histograms of all 36 channels.

    ``N_ij(tau) = (N0 p_ij(tau) + N_d) * g(tau)``, with ``p_ij`` evaluated at
    bin centres from the dephased pair state, a flat dark-count floor and a
    discrete convolution with the normalized response on a grid padded by
    five response widths on each side.
    """
    width = 0.0 if det.response == "delta" else det.fwhm_ps
    if width > 0 and width < 2 * grid.bin_width_ps:
        raise ConfigurationError(
            f"bin width {grid.bin_width_ps} ps too coarse for a {width} ps response "
            "(need width >= 2 bins)"
        )
    if check_coverage:
        need_lo = -3 * width
        need_hi = 5 * source.tau_x_ns * 1e3
        if grid.tau_start_ps > need_lo or grid.tau_end_ps < need_hi:
            raise ConfigurationError(
                f"grid [{grid.tau_start_ps}, {grid.tau_end_ps}] ps must cover "
                f"[{need_lo}, {need_hi}] ps"
            )
    if T_exp_s < 0:
        raise ConfigurationError("T_exp_s must be non-negative")

    dt = grid.bin_width_ps
    _, kernel = response_kernel(det, dt)
    pad = (len(kernel) - 1) // 2
    centers = grid.tau_start_ps + dt * (np.arange(-pad, grid.n_bins + pad) + 0.5)
    tau_ns = centers * 1e-3

    rho = dephased_state(tau_ns, source)
    probs = np.real(np.einsum("cab,tba->ct", _PROJ, rho))
    decay = np.where(
        tau_ns >= 0, np.exp(-np.clip(tau_ns, 0, None) / source.tau_x_ns) / source.tau_x_ns, 0.0
    )
    dt_ns = dt * 1e-3
    signal = pair_count_scale(source, T_exp_s) * probs * decay * dt_ns
    dark = dark_coincidences_per_ns(source, det, T_exp_s) * dt_ns
    raw = signal + dark
    if len(kernel) > 1:
        raw = fftconvolve(raw, kernel[None, :], mode="same", axes=1)
    counts = np.clip(raw[:, pad : pad + grid.n_bins], 0.0, None)

    meta = {
        "source": asdict(source),
        "detector": asdict(det),
    }
    return CoincidenceHistogramSet(grid.bin_width_ps, grid.tau_start_ps, counts, T_exp_s, meta)


def sample_histograms(expected: CoincidenceHistogramSet, seed: int) -> CoincidenceHistogramSet:
    """Independent Poisson draw per bin with the expected counts as means."""
    rng = np.random.default_rng(seed)
    counts = rng.poisson(expected.counts).astype(float)
    meta = dict(expected.metadata, seed=int(seed))
    return CoincidenceHistogramSet(
        expected.bin_width_ps, expected.tau_start_ps, counts, expected.T_exp_s, meta
    )
