"""Two-qubit state algebra for the photon/atom mode pair.

The logical basis is {|00>, |01>, |10>, |11>} with the first factor the
anti-Stokes photon qubit and the second the atomic (later read out as the
second photon) qubit.  |0> is the fundamental Gaussian mode channel and |1>
the unit-charge vortex channel.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "StateError",
    "MeasBasisState",
    "BASIS_LABELS",
    "PureTwoQubit",
    "TwoQubitState",
    "SourceSpectrum",
    "QuditPairState",
    "psi_gamma",
    "born_probability",
    "product_projector",
    "truncated_source_state",
    "purity",
    "fidelity_to_pure",
    "state_to_json",
    "state_from_json",
]

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-10


class StateError(ValueError):
    """Raised when a state or measurement object violates its contract."""


# Single-qubit analysis states.  u and d are the circular-superposition pair
# (|0> +/- i|1>)/sqrt(2).
_SQRT2 = math.sqrt(2.0)
BASIS_LABELS: dict[str, tuple[complex, complex]] = {
    "zero": (1.0, 0.0),
    "one": (0.0, 1.0),
    "plus": (1.0 / _SQRT2, 1.0 / _SQRT2),
    "minus": (1.0 / _SQRT2, -1.0 / _SQRT2),
    "u": (1.0 / _SQRT2, 1j / _SQRT2),
    "d": (1.0 / _SQRT2, -1j / _SQRT2),
}


@dataclass(frozen=True)
class MeasBasisState:
    """Single-qubit measurement state alpha|0> + beta|1>."""

    alpha: complex
    beta: complex
    label: str | None = None

    def __post_init__(self) -> None:
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if norm <= 0.0 or not math.isfinite(norm):
            raise StateError("measurement state must be a nonzero finite vector")
        if abs(norm - 1.0) > 1e-9:
            scale = 1.0 / math.sqrt(norm)
            object.__setattr__(self, "alpha", complex(self.alpha) * scale)
            object.__setattr__(self, "beta", complex(self.beta) * scale)

    @classmethod
    def from_label(cls, label: str) -> "MeasBasisState":
        try:
            alpha, beta = BASIS_LABELS[label]
        except KeyError:
            raise StateError(f"unknown basis label {label!r}") from None
        return cls(alpha, beta, label=label)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)


@dataclass(frozen=True)
class PureTwoQubit:
    """Pure two-qubit state as four amplitudes over {|00>,|01>,|10>,|11>}."""

    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(4)
        if not np.all(np.isfinite(amps.view(float))):
            raise StateError("amplitudes must be finite")
        norm = float(np.vdot(amps, amps).real)
        if norm <= 0.0:
            raise StateError("amplitudes must not all vanish")
        object.__setattr__(self, "amplitudes", amps / math.sqrt(norm))

    @property
    def ket(self) -> np.ndarray:
        return self.amplitudes

    def density_matrix(self) -> "TwoQubitState":
        return TwoQubitState(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class TwoQubitState:
    """Validated 4x4 density matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.matrix, dtype=complex)
        if rho.shape != (4, 4):
            raise StateError(f"density matrix must be 4x4, got {rho.shape}")
        if not np.all(np.isfinite(rho.view(float))):
            raise StateError("density matrix must be finite")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITICITY_TOL:
            raise StateError("density matrix is not Hermitian within 1e-10")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
            raise StateError("density matrix trace must be 1 within 1e-10")
        eigs = np.linalg.eigvalsh((rho + rho.conj().T) / 2.0)
        if eigs.min() < EIGENVALUE_FLOOR:
            raise StateError(f"density matrix has negative eigenvalue {eigs.min():.3e}")
        object.__setattr__(self, "matrix", rho)


def psi_gamma(gamma: complex) -> PureTwoQubit:
    """The source family (|00> + gamma|11>)/sqrt(1+|gamma|^2)."""
    gamma = complex(gamma)
    if not (math.isfinite(gamma.real) and math.isfinite(gamma.imag)):
        raise StateError("gamma must be finite")
    return PureTwoQubit(np.array([1.0, 0.0, 0.0, gamma], dtype=complex))


def product_projector(a: MeasBasisState, b: MeasBasisState) -> np.ndarray:
    """Rank-1 projector |a b><a b| on the two-qubit space."""
    ket = np.kron(a.vector, b.vector)
    return np.outer(ket, ket.conj())


def born_probability(state: TwoQubitState, a: MeasBasisState, b: MeasBasisState) -> float:
    """<ab| rho |ab>, clipped of numerical dust in [-1e-10, 0)."""
    ket = np.kron(a.vector, b.vector)
    p = float(np.real(ket.conj() @ state.matrix @ ket))
    if p < -1e-10 or p > 1.0 + 1e-10:
        raise StateError(f"Born probability {p} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class SourceSpectrum:
    """Truncated OAM spectrum of the spontaneous-Raman pair source.

    coefficients maps the anti-Stokes OAM index m to the amplitude C_m of
    |m>_photon |-m>_atom.  Amplitudes must be normalized; the excitation
    probability is the per-trial pair-creation probability and must stay in
    the weak-excitation regime (0, 0.1].
    """

    coefficients: dict[int, complex]
    excitation_probability: float
    m_max: int

    def __post_init__(self) -> None:
        if self.m_max < 0:
            raise StateError("m_max must be non-negative")
        if not self.coefficients:
            raise StateError("spectrum must contain at least one coefficient")
        for m in self.coefficients:
            if abs(m) > self.m_max:
                raise StateError(f"coefficient index {m} exceeds m_max={self.m_max}")
        total = sum(abs(c) ** 2 for c in self.coefficients.values())
        if abs(total - 1.0) > 1e-10:
            raise StateError(f"spectrum weights sum to {total}, expected 1")
        if not (0.0 < self.excitation_probability <= 0.1):
            raise StateError("excitation_probability must lie in (0, 0.1]")


@dataclass(frozen=True)
class QuditPairState:
    """Pure bipartite qudit state sum_m C_m |m>|-m> on the truncated OAM ladder.

    amplitudes[i, j] is the amplitude of |label_i>_photon |label_j>_atom where
    the atomic label is the *negated* OAM index.
    """

    amplitudes: np.ndarray
    photon_labels: tuple[int, ...]
    atom_labels: tuple[int, ...]

    def schmidt_coefficients(self) -> np.ndarray:
        return np.linalg.svd(self.amplitudes, compute_uv=False)

    def schmidt_entropy(self) -> float:
        lam = self.schmidt_coefficients() ** 2
        lam = lam[lam > 1e-15]
        return float(-np.sum(lam * np.log2(lam)))

    def restrict_to_qubit(self) -> PureTwoQubit:
        """Project onto the {0, +1} x {0, -1} logical subspace and renormalize."""
        amps = np.zeros(4, dtype=complex)
        for (i, mp) in enumerate(self.photon_labels):
            for (j, ma) in enumerate(self.atom_labels):
                if mp in (0, 1) and ma in (0, -1) and mp == -ma:
                    amps[3 if mp == 1 else 0] = self.amplitudes[i, j]
        if np.vdot(amps, amps).real <= 0.0:
            raise StateError("state has no weight on the logical qubit pair")
        return PureTwoQubit(amps)


def truncated_source_state(spectrum: SourceSpectrum) -> QuditPairState:
    """Build sum_m C_m |m>|-m> on the ladder m in [-m_max, m_max]."""
    labels = tuple(range(-spectrum.m_max, spectrum.m_max + 1))
    atom_labels = tuple(-m for m in labels)
    dim = len(labels)
    amps = np.zeros((dim, dim), dtype=complex)
    for m, c in spectrum.coefficients.items():
        i = labels.index(m)
        j = atom_labels.index(-m)
        amps[i, j] = c
    return QuditPairState(amps, labels, atom_labels)


def purity(state: TwoQubitState) -> float:
    return float(np.trace(state.matrix @ state.matrix).real)


def fidelity_to_pure(state: TwoQubitState, target: PureTwoQubit) -> float:
    ket = target.amplitudes
    f = float(np.real(ket.conj() @ state.matrix @ ket))
    return min(max(f, 0.0), 1.0)


def state_to_json(state: TwoQubitState) -> str:
    """Serialize as {"dim": 4, "matrix": [[re, im], ...]} row-major."""
    entries = [[float(z.real), float(z.imag)] for z in state.matrix.reshape(16)]
    return json.dumps({"dim": 4, "matrix": entries}, indent=2)


def state_from_json(text: str) -> TwoQubitState:
    data = json.loads(text)
    if data.get("dim") != 4:
        raise StateError(f"expected dim 4, got {data.get('dim')}")
    entries = data["matrix"]
    if len(entries) != 16:
        raise StateError(f"expected 16 matrix entries, got {len(entries)}")
    flat = np.array([complex(re, im) for re, im in entries], dtype=complex)
    return TwoQubitState(flat.reshape(4, 4))


def load_state(path: str | Path) -> TwoQubitState:
    return state_from_json(Path(path).read_text())


def save_state(state: TwoQubitState, path: str | Path) -> None:
    Path(path).write_text(state_to_json(state) + "\n")
