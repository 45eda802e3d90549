"""Two-qubit polarization states, projectors, waveplates and entanglement metrics.

Conventions used throughout the package:

* basis ordering ``(HH, HV, VH, VV)``, first qubit is the biexciton photon;
* Jones vectors ``D = (H+V)/√2``, ``A = (H-V)/√2``, ``R = (H+iV)/√2``,
  ``L = (H-iV)/√2``;
* entropies are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import fss_angular_frequency

__all__ = [
    "InvalidStateError",
    "LABELS",
    "LocalUnitaryParams",
    "jones",
    "bell_state",
    "cascade_state",
    "density",
    "validate_density",
    "projector",
    "projectors",
    "waveplate_unitary",
    "general_waveplate",
    "concurrence",
    "fidelity_pure",
    "max_entangled_fidelity",
    "local_rotate",
    "von_neumann_entropy",
    "quantum_rel_entropy",
    "binary_entropy",
    "trace_distance",
    "werner_state",
    "states_equal_up_to_phase",
]

LABELS = ("H", "V", "D", "A", "R", "L")

_SQ2 = np.sqrt(2.0)
_JONES = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQ2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQ2,
    "R": np.array([1.0, 1.0j], dtype=complex) / _SQ2,
    "L": np.array([1.0, -1.0j], dtype=complex) / _SQ2,
}

_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
_SYSY = np.kron(_SY, _SY)

# columns are the magic basis; maximally entangled states are real
# combinations of these up to a global phase
_MAGIC = np.array(
    [
        [1, 1j, 0, 0],
        [0, 0, 1j, 1],
        [0, 0, 1j, -1],
        [1, -1j, 0, 0],
    ],
    dtype=complex,
) / _SQ2

_TOL_HERM = 1e-10
_TOL_TRACE = 1e-10
_TOL_PSD = 1e-9
_EIG_CLIP = 1e-14


class InvalidStateError(ValueError):
    """Raised when a matrix is not a valid two-qubit density matrix."""


def jones(label: str) -> np.ndarray:
    """Jones vector of a polarization label (copy)."""
    try:
        return _JONES[label].copy()
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}") from None


def bell_state(kind: str) -> np.ndarray:
    """Normalized Bell vector. ``kind`` is one of ``Phi+``, ``Phi-``, ``Psi+``, ``Psi-``.

    The unicode spellings (``Φ+`` ...) are also accepted.
    """
    key = kind.replace("Φ", "Phi").replace("Ψ", "Psi").replace("phi", "Phi").replace("psi", "Psi")
    vecs = {
        "Phi+": [1, 0, 0, 1],
        "Phi-": [1, 0, 0, -1],
        "Psi+": [0, 1, 1, 0],
        "Psi-": [0, 1, -1, 0],
    }
    if key not in vecs:
        raise ValueError(f"unknown Bell state {kind!r}")
    return np.array(vecs[key], dtype=complex) / _SQ2


def cascade_state(tau, S):
    """Pair state ``(|HH> + exp(i S tau / hbar) |VV>)/√2`` after a delay ``tau``.

    Parameters
    ----------
    tau : float or array_like
        Delay between exciton and biexciton emission, in seconds.
    S : float
        Fine-structure splitting in μeV.

    Returns
    -------
    ndarray
        Shape ``(4,)`` for scalar ``tau`` or ``(..., 4)`` otherwise.
    """
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau must be finite")
    phase = np.exp(1j * fss_angular_frequency(S) * tau)
    out = np.zeros(tau.shape + (4,), dtype=complex)
    out[..., 0] = 1.0 / _SQ2
    out[..., 3] = phase / _SQ2
    return out


def density(psi) -> np.ndarray:
    """Projector ``|psi><psi|`` (batched over leading axes)."""
    psi = np.asarray(psi, dtype=complex)
    return psi[..., :, None] * psi[..., None, :].conj()


def validate_density(rho, *, tol_psd: float = _TOL_PSD) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity; return the hermitized matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidStateError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > _TOL_HERM:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > _TOL_TRACE:
        raise InvalidStateError(f"trace is {np.trace(rho).real:.12g}, expected 1")
    rho = 0.5 * (rho + rho.conj().T)
    lmin = np.linalg.eigvalsh(rho)[0]
    if lmin < -tol_psd:
        raise InvalidStateError(f"density matrix has negative eigenvalue {lmin:.3g}")
    return rho


def projector(i: str, j: str) -> np.ndarray:
    """Rank-1 projector ``|ij><ij|`` onto the product polarization state."""
    return density(np.kron(jones(i), jones(j)))


def projectors() -> dict[tuple[str, str], np.ndarray]:
    """All 36 projectors keyed by label pair, in the canonical channel order."""
    return {(i, j): projector(i, j) for i in LABELS for j in LABELS}


def waveplate_unitary(kind: str, angle: float) -> np.ndarray:
    """Jones matrix of a half- or quarter-wave plate with fast axis at ``angle`` (radians).

    The quarter-wave plate is the unitary matrix without the ``1/2`` prefactor
    that sometimes appears in calibration formulas.
    """
    c, s = np.cos(angle), np.sin(angle)
    if kind == "half":
        c2, s2 = np.cos(2 * angle), np.sin(2 * angle)
        return np.array([[c2, s2], [s2, -c2]], dtype=complex)
    if kind == "quarter":
        off = (1 - 1j) * s * c
        return np.array([[c * c + 1j * s * s, off], [off, s * s + 1j * c * c]], dtype=complex)
    raise ValueError(f"kind must be 'half' or 'quarter', got {kind!r}")


def general_waveplate(theta: float, phi: float) -> np.ndarray:
    """Single-qubit rotation ``QWP(phi) @ HWP(theta)`` (half-wave plate acts first)."""
    return waveplate_unitary("quarter", phi) @ waveplate_unitary("half", theta)


@dataclass(frozen=True)
class LocalUnitaryParams:
    """Waveplate angles for ``U1(theta1, phi1) ⊗ U2(theta2, phi2)``, canonicalized to [0, 2π)."""

    theta1: float = 0.0
    phi1: float = 0.0
    theta2: float = 0.0
    phi2: float = 0.0

    def __post_init__(self):
        for name in ("theta1", "phi1", "theta2", "phi2"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ValueError(f"{name} must be finite")
            val = float(np.mod(val, 2 * np.pi))
            object.__setattr__(self, name, 0.0 if val >= 2 * np.pi else val)

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "LocalUnitaryParams":
        return cls(*[float(v) for v in x])

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.phi1, self.theta2, self.phi2])

    def unitary(self) -> np.ndarray:
        """The 4x4 unitary ``U1 ⊗ U2``."""
        return np.kron(
            general_waveplate(self.theta1, self.phi1),
            general_waveplate(self.theta2, self.phi2),
        )


def local_rotate(rho, u: LocalUnitaryParams | None) -> np.ndarray:
    """Apply ``(U1 ⊗ U2) rho (U1 ⊗ U2)†``. Works on a batch of matrices too."""
    rho = np.asarray(rho, dtype=complex)
    if u is None:
        return rho.copy()
    U = u.unitary()
    return U @ rho @ U.conj().T


def _hermitize(rho):
    rho = np.asarray(rho, dtype=complex)
    return 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())


def concurrence(rho) -> float:
    """Wootters concurrence ``max(0, l1 - l2 - l3 - l4)``.

    The ``l_i`` are the decreasing square roots of the eigenvalues of
    ``rho (σy⊗σy) rho* (σy⊗σy)``. With ``rho = W W†`` they equal the
    singular values of ``W^T (σy⊗σy) W``, which avoids square roots of
    rounding-level eigenvalues for (near) pure states.
    """
    rho = validate_density(rho)
    w, v = np.linalg.eigh(rho)
    w = np.where(w > _EIG_CLIP, w, 0.0)
    W = v * np.sqrt(w)
    lam = np.linalg.svd(W.T @ _SYSY @ W, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def fidelity_pure(rho, psi) -> float:
    """Overlap ``<psi| rho |psi>`` with a normalized pure state."""
    rho = np.asarray(rho, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    return float(np.real(psi.conj() @ rho @ psi))


def max_entangled_fidelity(rho) -> float:
    """Fidelity to the closest maximally entangled pure state.

    In the magic basis every maximally entangled state is real up to a global
    phase, so the maximum over them is the largest eigenvalue of the real part
    of ``rho`` written in that basis.
    """
    rho = _hermitize(rho)
    m = _MAGIC.conj().T @ rho @ _MAGIC
    return float(np.linalg.eigvalsh(m.real)[-1])


def _entropy_from_eigs(w, clip: float = 1e-14):
    w = np.asarray(w, dtype=float)
    w = np.where(w > clip, w, 0.0)
    safe = np.where(w > 0, w, 1.0)
    return -np.sum(w * np.log2(safe), axis=-1)


def von_neumann_entropy(rho) -> float:
    """Von Neumann entropy in bits."""
    return float(_entropy_from_eigs(np.linalg.eigvalsh(_hermitize(rho))))


def binary_entropy(p):
    """Binary Shannon entropy ``h(p)`` in bits, with ``h(0) = h(1) = 0``."""
    p = np.asarray(p, dtype=float)
    return _entropy_from_eigs(np.stack([p, 1.0 - p], axis=-1))


def quantum_rel_entropy(rho, sigma, *, tol: float = 1e-12) -> float:
    """Relative entropy ``Tr[rho log2 rho] - Tr[rho log2 sigma]`` in bits.

    Raises
    ------
    ValueError
        If ``rho`` has weight outside the support of ``sigma``.
    """
    rho = _hermitize(rho)
    sigma = _hermitize(sigma)
    wr = np.linalg.eigvalsh(rho)
    ws, vs = np.linalg.eigh(sigma)
    weights = np.real(np.einsum("ik,ij,jk->k", vs.conj(), rho, vs))
    kernel = ws <= tol
    if np.any(weights[kernel] > 1e-10):
        raise ValueError("support of rho is not contained in the support of sigma")
    cross = np.sum(weights[~kernel] * np.log2(ws[~kernel]))
    return float(-_entropy_from_eigs(wr) - cross)


def trace_distance(rho, sigma) -> float:
    """``0.5 * ||rho - sigma||_1``."""
    d = _hermitize(np.asarray(rho) - np.asarray(sigma))
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(d))))


def werner_state(p: float, kind: str = "Phi+") -> np.ndarray:
    """``p |Bell><Bell| + (1 - p) I/4``."""
    return p * density(bell_state(kind)) + (1 - p) * np.eye(4) / 4


def states_equal_up_to_phase(a, b, atol: float = 1e-12) -> bool:
    """True when two normalized kets differ only by a global phase."""
    return bool(abs(abs(np.vdot(a, b)) - 1.0) <= atol)
