"""Maximum-likelihood two-qubit tomography, time-resolved.

The 36 projective measurements form nine basis settings of four outcomes
each. Counts within a setting are treated as multinomial, which normalizes
every setting independently, and the state is parameterized as
``rho = T† T / Tr[T† T]`` with lower-triangular ``T`` so that every iterate is
physical.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import qcore
from .simulation import CHANNELS, CoincidenceHistogramSet, ConfigurationError

__all__ = [
    "DegenerateDataError",
    "MleConvergenceWarning",
    "MleConfig",
    "MleResult",
    "TimeBinnedStates",
    "expected_probabilities",
    "mle_fit",
    "reconstruct_bin",
    "time_resolved_states",
    "metric_curve",
    "lifetime_weighted",
    "optimize_local_basis",
    "batched_fidelity",
    "write_curve_csv",
]

_PROJ = np.stack([qcore.projector(i, j) for i, j in CHANNELS])
# P[k] . conj(vec(rho)) = Tr[Pi_k rho] for Hermitian rho
_PVEC = _PROJ.reshape(36, 16)

# channel k belongs to setting (basis of qubit 1, basis of qubit 2)
_BASIS = {"H": 0, "V": 0, "D": 1, "A": 1, "R": 2, "L": 2}
SETTING_OF_CHANNEL = np.array([3 * _BASIS[i] + _BASIS[j] for i, j in CHANNELS])

_TRIL = np.tril_indices(4, -1)


class DegenerateDataError(ValueError):
    """Raised when a set of counts carries no information (e.g. all zero)."""


class MleConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MleConfig:
    """Settings of the likelihood maximization."""

    max_iterations: int = 5000
    tol: float = 1e-10
    likelihood: str = "poisson"

    def __post_init__(self):
        if self.max_iterations <= 0 or not self.tol > 0:
            raise ConfigurationError("max_iterations and tol must be positive")
        if self.likelihood not in ("poisson", "gaussian"):
            raise ConfigurationError(f"unknown likelihood {self.likelihood!r}")


@dataclass
class MleResult:
    rho: np.ndarray
    neg_log_likelihood: float
    iterations: int
    converged: bool


def _t_from_params(x):
    T = np.zeros((4, 4), dtype=complex)
    T[np.diag_indices(4)] = x[:4]
    T[_TRIL] = x[4:10] + 1j * x[10:16]
    return T


def _params_from_rho(rho):
    """Parameters of the lower-triangular ``T`` with ``T^dag T = rho`` (full rank)."""
    J = np.eye(4)[::-1]
    L = np.linalg.cholesky(J @ rho @ J)
    T = J @ L.conj().T @ J
    return np.concatenate([T[np.diag_indices(4)].real, T[_TRIL].real, T[_TRIL].imag])


def _params_from_grad(G):
    """Pack d/dRe T and d/dIm T (given as complex ``G = dRe + i dIm``) like the parameters."""
    return np.concatenate([G[np.diag_indices(4)].real, G[_TRIL].real, G[_TRIL].imag])


def expected_probabilities(rho) -> np.ndarray:
    """``Tr[Pi_ij rho]`` for the 36 channels (batched over leading axes)."""
    rho = np.asarray(rho, dtype=complex)
    return np.real(np.einsum("kab,...ba->...k", _PROJ, rho))


def _objective(counts, likelihood):
    n_total = counts.sum()
    c = counts / n_total
    setting_tot = np.bincount(SETTING_OF_CHANNEL, weights=c, minlength=9)[SETTING_OF_CHANNEL]
    positive = c > 0

    def fun(x):
        T = _t_from_params(x)
        A = T.conj().T @ T
        t = np.trace(A).real
        a = np.real(_PVEC @ A.T.reshape(16))
        if likelihood == "poisson":
            safe = np.where(positive, np.maximum(a, 1e-300), 1.0)
            f = -np.sum(c[positive] * np.log(safe[positive])) + c.sum() * np.log(t)
            w = np.where(positive, c / safe, 0.0)
            M = -np.einsum("k,kab->ab", w, _PROJ) + (c.sum() / t) * np.eye(4)
        else:
            q = a / t
            var = np.maximum(c, 1.0 / n_total)
            resid = c - setting_tot * q
            f = 0.5 * np.sum(resid**2 / var)
            u = -resid * setting_tot / var
            M = np.einsum("k,kab->ab", u / t, _PROJ) - (np.sum(u * a) / t**2) * np.eye(4)
        X = M @ T.conj().T
        G = 2.0 * (X.T.real - 1j * X.T.imag)
        return f, _params_from_grad(G)

    return fun


def mle_fit(counts, cfg: MleConfig | None = None) -> MleResult:
    """Maximum-likelihood state for one set of 36 channel counts (CHANNELS order).

    ``rho = T^dag T / tr(T^dag T)`` with lower-triangular ``T``; L-BFGS-B runs
    on its 16 real parameters starting from ``I/4``, with warm restarts
    from a slightly mixed copy of the estimate until a restart stops
    improving the objective.
    """
    cfg = cfg or MleConfig()
    counts = np.asarray(counts, dtype=float).reshape(-1)
    if counts.shape != (36,):
        raise ValueError(f"expected 36 counts, got {counts.shape}")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("counts must be finite and non-negative")
    if counts.sum() <= 0:
        raise DegenerateDataError("all counts are zero")

    fun = _objective(counts, cfg.likelihood)
    x = np.zeros(16)
    x[:4] = 0.5
    f_best, nit, converged = np.inf, 0, False
    # The factorization has vanishing gradients near rank-deficient T, where
    # L-BFGS-B crawls. Each warm restart therefore re-enters the interior by
    # mixing the current estimate with I/4, and is kept only if it improves.
    for _ in range(20):
        res = minimize(
            fun,
            x,
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": max(1, cfg.max_iterations - nit),
                "ftol": cfg.tol,
                "gtol": 1e-12,
                "maxcor": 30,
                "maxls": 50,
            },
        )
        nit += int(res.nit)
        gain = f_best - res.fun
        if res.fun < f_best:
            f_best, x_best = float(res.fun), res.x
        if nit >= cfg.max_iterations:
            break
        if gain <= cfg.tol * max(1.0, abs(f_best)):
            converged = True
            break
        T = _t_from_params(x_best)
        A = T.conj().T @ T
        x = _params_from_rho(0.9 * A / np.trace(A).real + 0.025 * np.eye(4))
    x = x_best
    T = _t_from_params(x)
    A = T.conj().T @ T
    rho = A / np.trace(A).real
    rho = 0.5 * (rho + rho.conj().T)
    return MleResult(rho, f_best, nit, converged)


def reconstruct_bin(counts, cfg: MleConfig | None = None) -> np.ndarray:
    """Physical density matrix maximizing the likelihood of the 36 counts.

    A :class:`MleConvergenceWarning` is emitted, and the last iterate returned,
    when the optimizer stops before convergence.
    """
    res = mle_fit(counts, cfg)
    if not res.converged:
        warnings.warn(
            f"MLE did not converge after {res.iterations} iterations", MleConvergenceWarning
        )
    return res.rho


@dataclass
class TimeBinnedStates:
    """Density matrices reconstructed in consecutive delay windows.

    ``tau_ps`` are window centres, ``n_tau`` the total coincidences of all 36
    channels in each window. ``skipped`` lists the centres of windows that
    held no usable data.
    """

    window_ps: float
    tau_ps: np.ndarray
    rhos: np.ndarray
    n_tau: np.ndarray
    converged: np.ndarray | None = None
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.tau_ps = np.asarray(self.tau_ps, dtype=float)
        self.rhos = np.asarray(self.rhos, dtype=complex).reshape(-1, 4, 4)
        self.n_tau = np.asarray(self.n_tau, dtype=float)
        if self.converged is None:
            self.converged = np.ones(len(self.tau_ps), dtype=bool)
        self.converged = np.asarray(self.converged, dtype=bool)
        if not (len(self.tau_ps) == len(self.rhos) == len(self.n_tau)):
            raise ValueError("tau_ps, rhos and n_tau must have equal length")
        if np.any(np.diff(self.tau_ps) < self.window_ps - 1e-9):
            raise ValueError("windows must be ascending and non-overlapping")
        if np.any(self.n_tau < 0):
            raise ValueError("n_tau must be non-negative")

    def __len__(self):
        return len(self.tau_ps)

    def select(self, tmin_ps: float = -np.inf, tmax_ps: float = np.inf) -> "TimeBinnedStates":
        """Windows lying entirely inside ``[tmin_ps, tmax_ps]``."""
        half = self.window_ps / 2
        eps = 1e-9 * self.window_ps
        keep = (self.tau_ps - half >= tmin_ps - eps) & (self.tau_ps + half <= tmax_ps + eps)
        return TimeBinnedStates(
            self.window_ps, self.tau_ps[keep], self.rhos[keep], self.n_tau[keep],
            self.converged[keep], list(self.skipped),
        )

    def rotated(self, u: qcore.LocalUnitaryParams) -> "TimeBinnedStates":
        return TimeBinnedStates(
            self.window_ps, self.tau_ps, qcore.local_rotate(self.rhos, u), self.n_tau,
            self.converged, list(self.skipped),
        )

    def to_json(self, path=None, sig: int = 12):
        entries = []
        for tau, rho, n in zip(self.tau_ps, self.rhos, self.n_tau):
            flat = rho.reshape(16)
            entries.append(
                {
                    "tau_ps": float(f"{tau:.{sig}g}"),
                    "n_tau": float(f"{n:.{sig}g}"),
                    "rho": [[float(f"{z.real:.{sig}g}"), float(f"{z.imag:.{sig}g}")] for z in flat],
                }
            )
        doc = {
            "window_ps": self.window_ps,
            "entries": entries,
            "skipped_tau_ps": [float(s) for s in self.skipped],
        }
        text = json.dumps(doc, indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "TimeBinnedStates":
        if isinstance(source, (str, Path)) and Path(str(source)).exists():
            doc = json.loads(Path(source).read_text())
        else:
            doc = json.loads(source)
        entries = doc["entries"]
        rhos = np.array(
            [[complex(re, im) for re, im in e["rho"]] for e in entries], dtype=complex
        ).reshape(-1, 4, 4)
        return cls(
            float(doc["window_ps"]),
            np.array([e["tau_ps"] for e in entries], dtype=float),
            rhos,
            np.array([e["n_tau"] for e in entries], dtype=float),
            skipped=list(doc.get("skipped_tau_ps", [])),
        )


def time_resolved_states(
    h: CoincidenceHistogramSet, window_ps: float, cfg: MleConfig | None = None
) -> TimeBinnedStates:
    """Reconstruct one state per delay window ``[tau, tau + window_ps)``."""
    ratio = window_ps / h.bin_width_ps
    n_per = int(round(ratio))
    if n_per < 1 or abs(ratio - n_per) > 1e-9:
        raise ConfigurationError(
            f"window {window_ps} ps must be a positive multiple of the bin width {h.bin_width_ps} ps"
        )
    n_win = h.n_bins // n_per
    agg = h.counts[:, : n_win * n_per].reshape(36, n_win, n_per).sum(axis=2)
    centers = h.tau_start_ps + window_ps * (np.arange(n_win) + 0.5)

    taus, rhos, ns, conv, skipped = [], [], [], [], []
    for w in range(n_win):
        counts = agg[:, w]
        try:
            res = mle_fit(counts, cfg)
        except DegenerateDataError:
            skipped.append(float(centers[w]))
            continue
        taus.append(centers[w])
        rhos.append(res.rho)
        ns.append(counts.sum())
        conv.append(res.converged)
    if not taus:
        rhos_arr = np.zeros((0, 4, 4), dtype=complex)
    else:
        rhos_arr = np.array(rhos)
    return TimeBinnedStates(window_ps, np.array(taus), rhos_arr, np.array(ns), np.array(conv, dtype=bool), skipped)


def batched_fidelity(rhos, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.real(np.einsum("a,...ab,b->...", psi.conj(), rhos, psi))


def metric_curve(
    states: TimeBinnedStates,
    metric: str = "concurrence",
    reference=None,
):
    """Evaluate a metric on every window; returns ``(tau_ps, values)``.

    ``metric`` is ``"concurrence"``, ``"fidelity"`` or ``"fmax"``. For
    ``"fidelity"`` the ``reference`` is a ket or a callable mapping a window
    centre in ps to a ket.
    """
    if metric == "concurrence":
        vals = [qcore.concurrence(r) for r in states.rhos]
    elif metric == "fmax":
        vals = [qcore.max_entangled_fidelity(r) for r in states.rhos]
    elif metric == "fidelity":
        if reference is None:
            raise ValueError("fidelity needs a reference state")
        ref = reference if callable(reference) else (lambda _t: reference)
        vals = [qcore.fidelity_pure(r, ref(t)) for t, r in zip(states.tau_ps, states.rhos)]
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return states.tau_ps.copy(), np.array(vals, dtype=float)


def lifetime_weighted(values, weights) -> float:
    """Coincidence-weighted average ``sum(N v) / sum(N)``."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    total = weights.sum()
    if not total > 0:
        raise ValueError("total weight must be positive")
    return float(np.dot(weights, values) / total)


def write_curve_csv(path, tau_ps, values, n_tau, sig: int = 12) -> None:
    data = np.column_stack([tau_ps, values, n_tau])
    np.savetxt(path, data, delimiter=",", header="tau_ps,value,n_tau", comments="", fmt=f"%.{sig}g")


def _waveplate_stack(thetas, phis):
    """QWP(phi) @ HWP(theta) for all pairs; shape ``(len(thetas)*len(phis), 2, 2)``."""
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    th, ph = th.ravel(), ph.ravel()
    c2, s2 = np.cos(2 * th), np.sin(2 * th)
    hwp = np.stack([np.stack([c2, s2], -1), np.stack([s2, -c2], -1)], -2).astype(complex)
    c, s = np.cos(ph), np.sin(ph)
    off = (1 - 1j) * s * c
    qwp = np.stack(
        [np.stack([c * c + 1j * s * s, off], -1), np.stack([off, s * s + 1j * c * c], -1)], -2
    )
    return qwp @ hwp, th, ph


def optimize_local_basis(
    states: TimeBinnedStates,
    objective: Callable[[np.ndarray], np.ndarray],
    *,
    grid_points: int = 12,
    refine: bool = True,
    chunk: int = 512,
):
    """Local waveplate rotation maximizing the coincidence-weighted objective.

    ``objective`` maps rotated density matrices of shape ``(..., n, 4, 4)`` to
    values of shape ``(..., n)``; the aggregate is their ``n_tau``-weighted
    mean. A coarse grid over the four angles is followed by a Nelder-Mead
    refinement of the best grid point. This is a heuristic search.

    Returns
    -------
    (LocalUnitaryParams, float)
    """
    if len(states) == 0:
        raise ValueError("no states to optimize over")
    w = states.n_tau / states.n_tau.sum()
    rhos = states.rhos

    thetas = np.arange(grid_points) * (np.pi / 2) / grid_points
    phis = np.arange(grid_points) * np.pi / grid_points
    U1, th, ph = _waveplate_stack(thetas, phis)
    m = len(U1)
    best_val, best_idx = -np.inf, (0, 0)
    step = max(1, chunk // m)
    for a0 in range(0, m, step):
        a = np.arange(a0, min(m, a0 + step))
        U = np.einsum("aij,bkl->abikjl", U1[a], U1).reshape(len(a), m, 4, 4)
        rot = np.einsum("abij,njk,ablk->abnil", U, rhos, U.conj())
        agg = objective(rot) @ w
        k = np.unravel_index(np.argmax(agg), agg.shape)
        if agg[k] > best_val:
            best_val, best_idx = float(agg[k]), (a[k[0]], k[1])
    x0 = np.array([th[best_idx[0]], ph[best_idx[0]], th[best_idx[1]], ph[best_idx[1]]])

    def neg(x):
        u = qcore.LocalUnitaryParams.from_array(x)
        return -float(objective(qcore.local_rotate(rhos, u)) @ w)

    x_best, v_best = x0, best_val
    if refine:
        res = minimize(
            neg, x0, method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000},
        )
        if -res.fun >= v_best:
            x_best, v_best = res.x, -float(res.fun)
    return qcore.LocalUnitaryParams.from_array(x_best), v_best
