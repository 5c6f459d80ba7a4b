"""Entanglement quantification from reconstructed states and raw counts.

Covers the analysis chain applied to the coincidence data: the p+q-1
fidelity lower bound from two complementary-basis sub-tables, Wootters
concurrence and entanglement of formation, purity, the fidelity-maximizing
pure state of the (|00> + gamma|11>) family, and parametric-bootstrap error
bars driven by Poisson resampling of the counts.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .experiment_sim import CoincidenceTable
from .quantum_core import TwoQubitState, psi_gamma, purity
from .tomography import TomographyDataset, mle_reconstruct

__all__ = [
    "MetricsError",
    "WitnessInput",
    "WitnessBound",
    "MetricReport",
    "fidelity_lower_bound",
    "concurrence",
    "entanglement_of_formation",
    "best_pure_fit",
    "bootstrap_errors",
    "full_report",
    "save_report",
    "load_report",
]

BOOTSTRAP_STREAM = 3

# correlated coincidence combinations for a Phi-type target: matching labels
# in the +/- basis, opposite labels in the circular basis (the i*i sign)
_C_ORDER = ("plus", "minus")
_D_ORDER = ("u", "d")
_C_CORRELATED = ((0, 0), (1, 1))
_D_CORRELATED = ((0, 1), (1, 0))


class MetricsError(ValueError):
    """Raised for unusable metric inputs."""


@dataclass(frozen=True)
class WitnessInput:
    """Coincidence counts in the two superposition bases.

    counts_c[i][j] holds the (plus, minus)[i] x (plus, minus)[j] pair;
    counts_d[i][j] the (u, d)[i] x (u, d)[j] pair.  Counts may be floats
    (for example background-subtracted values).
    """

    counts_c: np.ndarray
    counts_d: np.ndarray

    def __post_init__(self) -> None:
        for name in ("counts_c", "counts_d"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (2, 2):
                raise MetricsError(f"{name} must be a 2x2 table")
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                raise MetricsError(f"{name} must hold finite counts >= 0")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_table(cls, table: CoincidenceTable) -> "WitnessInput":
        counts_c = np.zeros((2, 2))
        counts_d = np.zeros((2, 2))
        for order, target in ((_C_ORDER, counts_c), (_D_ORDER, counts_d)):
            for i, a in enumerate(order):
                for j, b in enumerate(order):
                    target[i, j] = table.row_for(a, b).coincidences
        return cls(counts_c, counts_d)


@dataclass(frozen=True)
class WitnessBound:
    value: float
    stderr: float
    p: float
    q: float
    entangled: bool


def _correlated_fraction(counts: np.ndarray, correlated) -> tuple[float, float]:
    total = float(counts.sum())
    if total <= 0.0:
        raise MetricsError("witness sub-table has no counts")
    frac = sum(float(counts[i, j]) for i, j in correlated) / total
    return frac, total


def fidelity_lower_bound(witness: WitnessInput) -> WitnessBound:
    """Bell-fidelity lower bound p + q - 1 from two complementary bases.

    p is the correlated fraction in the +/- basis, q in the circular basis;
    a value above 0.5 certifies entanglement.  The standard error treats
    each correlated fraction as binomial at fixed sub-table total, which
    matches Poisson resampling of the individual counts.
    """
    p, total_c = _correlated_fraction(witness.counts_c, _C_CORRELATED)
    q, total_d = _correlated_fraction(witness.counts_d, _D_CORRELATED)
    value = p + q - 1.0
    var = p * (1.0 - p) / total_c + q * (1.0 - q) / total_d
    stderr = math.sqrt(max(var, 0.0))
    return WitnessBound(value, stderr, p, q, bool(value > 0.5))


# ---------------------------------------------------------------------------
# concurrence / EOF


_SIGMA_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]])).real


def concurrence(state: TwoQubitState) -> float:
    """Wootters concurrence from the spin-flip construction."""
    rho = state.matrix
    flipped = _SIGMA_YY @ rho.conj() @ _SIGMA_YY
    eigs = np.linalg.eigvals(rho @ flipped)
    lams = np.sqrt(np.clip(eigs.real, 0.0, None))
    lams = np.sort(lams)[::-1]
    return float(max(0.0, lams[0] - lams[1] - lams[2] - lams[3]))


def _binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def entanglement_of_formation(state: TwoQubitState) -> float:
    """EOF via concurrence: h((1 + sqrt(1 - C^2)) / 2)."""
    c = concurrence(state)
    return _binary_entropy(0.5 * (1.0 + math.sqrt(max(0.0, 1.0 - c * c))))


def concurrence_of_gamma(gamma: complex) -> float:
    """Closed form for the pure family: 2|gamma| / (1 + |gamma|^2)."""
    g = abs(gamma)
    return 2.0 * g / (1.0 + g * g)


# ---------------------------------------------------------------------------
# best pure fit


def _family_fidelity(rho: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """<Psi(gamma)|rho|Psi(gamma)> vectorized over gamma."""
    norm = 1.0 + np.abs(gamma) ** 2
    return (rho[0, 0].real + np.abs(gamma) ** 2 * rho[3, 3].real
            + 2.0 * np.real(gamma * rho[0, 3])) / norm


@dataclass(frozen=True)
class PureFit:
    gamma: complex
    fidelity: float


def best_pure_fit(state: TwoQubitState, gamma_max: float = 4.0) -> PureFit:
    """Fidelity-maximizing member of the (|00> + gamma|11>) family.

    Coarse polar grid (modulus step 0.01, phase step pi/100) followed by
    simplex refinement; the modulus -> infinity limit (the |11> projector)
    is checked explicitly.  For a flat objective (for example the maximally
    mixed state) any maximizing gamma may be returned.
    """
    if gamma_max < 2.0:
        raise MetricsError("gamma_max must be >= 2")
    rho = state.matrix
    moduli = np.arange(0.0, gamma_max + 0.005, 0.01)
    phases = np.arange(-math.pi, math.pi, math.pi / 100.0)
    grid = moduli[:, None] * np.exp(1j * phases[None, :])
    fids = _family_fidelity(rho, grid)
    best = np.unravel_index(int(np.argmax(fids)), fids.shape)
    g0 = grid[best]

    def negfid(xy):
        return -_family_fidelity(rho, np.complex128(complex(xy[0], xy[1])))

    opt = minimize(negfid, [g0.real, g0.imag], method="Nelder-Mead",
                   options={"xatol": 1e-5, "fatol": 1e-12, "maxiter": 2000})
    gamma = complex(opt.x[0], opt.x[1])
    fidelity = float(-opt.fun)
    if float(fids[best]) > fidelity:
        gamma, fidelity = complex(g0), float(fids[best])
    limit = rho[3, 3].real
    # report the |11> projector as an infinite-modulus fit when the
    # refinement escapes the search domain chasing the asymptote
    if limit > fidelity or (abs(gamma) > gamma_max and limit >= fidelity - 1e-12):
        return PureFit(complex(math.inf, 0.0), float(max(limit, fidelity)))
    return PureFit(gamma, fidelity)


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap_errors(counts, pipeline, n_resamples: int = 1000, seed: int = 0,
                     n_threads: int = 1):
    """Parametric bootstrap: Poisson-resample counts around the observed
    values and re-run the metric pipeline.

    counts: array-like of observed counts (any shape); pipeline: callable
    mapping a resampled array of the same shape to a dict of metric values.
    Returns (stderr dict, failure count).  Resample i draws from the RNG
    stream (seed, BOOTSTRAP_STREAM, i) and results reduce in index order,
    so the output is reproducible and independent of evaluation order.
    n_threads > 1 runs resamples on a thread pool; 0 means one per CPU.
    """
    if n_resamples < 100:
        raise MetricsError("need at least 100 resamples")
    base = np.asarray(counts, dtype=float)
    if np.any(base < 0):
        raise MetricsError("counts must be >= 0")

    def one(i: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, BOOTSTRAP_STREAM, i]))
        resampled = rng.poisson(base).astype(float)
        try:
            return pipeline(resampled)
        except Exception:
            return None

    if n_threads == 0:
        n_threads = os.cpu_count() or 1
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, range(n_resamples)))
    else:
        results = [one(i) for i in range(n_resamples)]

    samples: dict[str, list[float]] = {}
    failures = 0
    for metrics in results:
        if metrics is None:
            failures += 1
            continue
        for key, value in metrics.items():
            samples.setdefault(key, []).append(float(value))
    if failures == n_resamples:
        raise MetricsError("every bootstrap resample failed")
    stderrs = {key: float(np.std(values, ddof=1)) for key, values in samples.items()}
    return stderrs, failures


# ---------------------------------------------------------------------------
# full report


@dataclass(frozen=True)
class MetricReport:
    fidelity_lower_bound: float
    fidelity_lower_bound_stderr: float
    eof: float
    eof_stderr: float
    purity: float
    purity_stderr: float
    gamma_best: complex
    fidelity_at_gamma_best: float
    eof_of_pure_fit: float
    bootstrap_resamples: int
    bootstrap_failures: int

    def __post_init__(self) -> None:
        if self.fidelity_lower_bound > 1.0 + 1e-9:
            raise MetricsError("fidelity lower bound cannot exceed 1")
        if not (-1e-9 <= self.eof <= 1.0 + 1e-9):
            raise MetricsError("two-qubit EOF must lie in [0, 1]")
        if not (0.25 - 1e-9 <= self.purity <= 1.0 + 1e-9):
            raise MetricsError("two-qubit purity must lie in [0.25, 1]")


def full_report(dataset: TomographyDataset, witness: WitnessInput,
                config=None, n_resamples: int = 1000, seed: int | None = None,
                tol: float = 1e-10, max_iter: int = 5000,
                n_threads: int = 1) -> MetricReport:
    """Complete analysis: reconstruction, EOF, purity, pure-state fit,
    fidelity bound, and bootstrap errors for the statistical quantities."""
    if seed is None:
        seed = getattr(config, "rng_seed", 0) if config is not None else 0
    result = mle_reconstruct(dataset, tol=tol, max_iter=max_iter)
    rho = result.rho
    bound = fidelity_lower_bound(witness)
    fit = best_pure_fit(rho)

    n_data = dataset.counts.size

    def pipeline(resampled: np.ndarray) -> dict[str, float]:
        ds = TomographyDataset(dataset.settings, resampled[:n_data], dataset.exposures)
        wit = WitnessInput(resampled[n_data:n_data + 4].reshape(2, 2),
                           resampled[n_data + 4:n_data + 8].reshape(2, 2))
        rec = mle_reconstruct(ds, tol=tol, max_iter=max_iter)
        return {
            "eof": entanglement_of_formation(rec.rho),
            "purity": purity(rec.rho),
            "fidelity_lower_bound": fidelity_lower_bound(wit).value,
        }

    stacked = np.concatenate([dataset.counts,
                              witness.counts_c.ravel(), witness.counts_d.ravel()])
    stderrs, failures = bootstrap_errors(stacked, pipeline, n_resamples, seed,
                                         n_threads=n_threads)
    return MetricReport(
        fidelity_lower_bound=bound.value,
        fidelity_lower_bound_stderr=stderrs["fidelity_lower_bound"],
        eof=entanglement_of_formation(rho),
        eof_stderr=stderrs["eof"],
        purity=purity(rho),
        purity_stderr=stderrs["purity"],
        gamma_best=fit.gamma,
        fidelity_at_gamma_best=fit.fidelity,
        eof_of_pure_fit=entanglement_of_formation(
            psi_gamma(fit.gamma).density_matrix()) if math.isfinite(fit.gamma.real)
        else 0.0,
        bootstrap_resamples=n_resamples,
        bootstrap_failures=failures,
    )


def save_report(report: MetricReport, path: str | Path) -> None:
    payload = {
        "fidelity_lower_bound": report.fidelity_lower_bound,
        "fidelity_lower_bound_stderr": report.fidelity_lower_bound_stderr,
        "eof": report.eof,
        "eof_stderr": report.eof_stderr,
        "purity": report.purity,
        "purity_stderr": report.purity_stderr,
        "gamma_best": {"re": report.gamma_best.real, "im": report.gamma_best.imag},
        "fidelity_at_gamma_best": report.fidelity_at_gamma_best,
        "eof_of_pure_fit": report.eof_of_pure_fit,
        "bootstrap_resamples": report.bootstrap_resamples,
        "bootstrap_failures": report.bootstrap_failures,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> MetricReport:
    payload = json.loads(Path(path).read_text())
    try:
        return MetricReport(
            fidelity_lower_bound=float(payload["fidelity_lower_bound"]),
            fidelity_lower_bound_stderr=float(payload["fidelity_lower_bound_stderr"]),
            eof=float(payload["eof"]),
            eof_stderr=float(payload["eof_stderr"]),
            purity=float(payload["purity"]),
            purity_stderr=float(payload["purity_stderr"]),
            gamma_best=complex(payload["gamma_best"]["re"], payload["gamma_best"]["im"]),
            fidelity_at_gamma_best=float(payload["fidelity_at_gamma_best"]),
            eof_of_pure_fit=float(payload["eof_of_pure_fit"]),
            bootstrap_resamples=int(payload["bootstrap_resamples"]),
            bootstrap_failures=int(payload["bootstrap_failures"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MetricsError(f"bad metric report {path}: {exc}") from None
