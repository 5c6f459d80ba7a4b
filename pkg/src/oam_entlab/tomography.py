"""Two-qubit state reconstruction from coincidence counts.

Linear inversion provides a fast (possibly unphysical) estimate and the
initializer; the production estimator maximizes a Poisson likelihood over
the Cholesky-parameterized density matrix, so the result is positive
semidefinite with unit trace by construction.  The overall pair-detection
efficiency is unknown in a real run, so the likelihood profiles a global
scale factor; only relative exposures between settings matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .experiment_sim import CoincidenceTable
from .quantum_core import (
    MeasBasisState,
    StateError,
    TwoQubitState,
    born_probability,
    product_projector,
)

__all__ = [
    "TomographyError",
    "CANONICAL_SETTINGS",
    "TomographyDataset",
    "ReconstructionResult",
    "dataset_from_table",
    "poisson_dataset",
    "predicted_probabilities",
    "linear_inversion",
    "mle_reconstruct",
    "save_reconstruction",
    "load_reconstruction",
]

# Any informationally complete choice works; four states per side whose
# projectors span the single-qubit operator space give 16 product settings.
CANONICAL_SETTINGS: tuple[tuple[str, str], ...] = tuple(
    (a, b) for a in ("zero", "one", "plus", "u") for b in ("zero", "one", "plus", "u")
)

_PROB_FLOOR = 1e-12
_GRAM_CONDITION_LIMIT = 1e12


class TomographyError(ValueError):
    """Raised for datasets the reconstruction cannot use."""


def _as_meas(setting) -> MeasBasisState:
    if isinstance(setting, MeasBasisState):
        return setting
    if isinstance(setting, str):
        return MeasBasisState.from_label(setting)
    raise TomographyError(f"cannot interpret setting {setting!r}")


def _projector_stack(settings) -> np.ndarray:
    return np.array([product_projector(_as_meas(a), _as_meas(b)) for a, b in settings])


@dataclass(frozen=True)
class TomographyDataset:
    """Counts and exposures over an informationally complete setting list.

    counts may be non-integer (background-subtracted data); exposures set
    the relative weight of each setting and may carry an arbitrary common
    scale.  Construction verifies informational completeness through the
    condition number of the projector Gram matrix.
    """

    settings: tuple
    counts: np.ndarray
    exposures: np.ndarray

    def __post_init__(self) -> None:
        settings = tuple((a, b) for a, b in self.settings)
        counts = np.asarray(self.counts, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        if len(settings) != counts.size or counts.size != exposures.size:
            raise TomographyError("settings, counts and exposures must align")
        if counts.size < 16:
            raise TomographyError("need at least 16 settings for a two-qubit state")
        if np.any(~np.isfinite(counts)) or np.any(counts < 0):
            raise TomographyError("counts must be finite and >= 0")
        if np.any(~np.isfinite(exposures)) or np.any(exposures <= 0):
            raise TomographyError("exposures must be finite and > 0")
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "exposures", exposures)
        if self.gram_condition() > _GRAM_CONDITION_LIMIT:
            raise TomographyError("measurement settings are not informationally complete")

    def projectors(self) -> np.ndarray:
        return _projector_stack(self.settings)

    def design_matrix(self) -> np.ndarray:
        """Real (n_settings x 16) map from Hermitian-basis coordinates to
        probabilities."""
        proj = self.projectors()
        basis = _hermitian_basis()
        return np.real(np.einsum("kij,aji->ka", proj, basis))

    def gram_condition(self) -> float:
        a = self.design_matrix()
        s = np.linalg.svd(a, compute_uv=False)
        if s[-1] <= 0.0:
            return math.inf
        return float(s[0] / s[-1])


@dataclass(frozen=True)
class ReconstructionResult:
    rho: TwoQubitState
    log_likelihood: float
    iterations: int
    converged: bool
    gram_condition: float
    ll_history: tuple = ()


def dataset_from_table(table: CoincidenceTable, repetition_rate: float,
                       subtract_accidentals: bool = True,
                       drift_factors=None) -> TomographyDataset:
    """Dataset with exposures = duration * repetition_rate per row.

    With subtract_accidentals the expected uncorrelated-coincidence floor,
    estimated from the recorded singles as singles_as * singles_s / trials,
    is removed from each row (clipped at zero).  Without it the floor leaks
    into the reconstruction as spurious mixedness.

    Analyzed singles rates depend on the measurement setting through the
    state marginals, so they are not used as a drift monitor here; when an
    independent monitor shows per-setting drift, pass its relative factors
    (normalized internally to unit mean).
    """
    if repetition_rate <= 0.0:
        raise TomographyError("repetition_rate must be positive")
    settings = [(row.setting_as, row.setting_s) for row in table.rows]
    counts = np.array([row.coincidences for row in table.rows], dtype=float)
    exposures = np.array([row.duration_s * repetition_rate for row in table.rows])
    if subtract_accidentals:
        singles_product = np.array(
            [row.singles_as * row.singles_s for row in table.rows], dtype=float)
        counts = np.clip(counts - singles_product / exposures, 0.0, None)
    if drift_factors is not None:
        drift = np.asarray(drift_factors, dtype=float)
        if drift.size != exposures.size or np.any(drift <= 0):
            raise TomographyError("drift_factors must be positive, one per row")
        exposures = exposures * (drift / drift.mean())
    return TomographyDataset(tuple(settings), counts, exposures)


def poisson_dataset(rho: TwoQubitState, exposure: float, rng,
                    settings=CANONICAL_SETTINGS) -> TomographyDataset:
    """Synthetic dataset: counts ~ Poisson(exposure * Born probability)."""
    probs = np.array(predicted_probabilities(rho, settings))
    counts = rng.poisson(exposure * probs).astype(float)
    exposures = np.full(len(settings), float(exposure))
    return TomographyDataset(tuple(settings), counts, exposures)


def predicted_probabilities(rho: TwoQubitState, settings) -> list[float]:
    """Born probability per product setting."""
    return [born_probability(rho, _as_meas(a), _as_meas(b)) for a, b in settings]


# ---------------------------------------------------------------------------
# linear inversion


def _hermitian_basis() -> np.ndarray:
    """Orthonormal Hermitian basis: two-qubit Pauli products / 2."""
    sig = [np.eye(2), np.array([[0, 1], [1, 0]], dtype=complex),
           np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]], dtype=complex)]
    return np.array([np.kron(a, b) / 2.0 for a in sig for b in sig])


def linear_inversion(dataset: TomographyDataset) -> np.ndarray:
    """Least-squares solve of <P_k, rho> = n_k/N_k in Hermitian coordinates.

    Returns a Hermitian unit-trace matrix that may have negative eigenvalues
    on noisy data.  Any common scale on the frequencies drops out through
    the final trace normalization.
    """
    a = dataset.design_matrix()
    freq = dataset.counts / dataset.exposures
    coeff, *_ = np.linalg.lstsq(a, freq, rcond=None)
    rho = np.einsum("a,aij->ij", coeff, _hermitian_basis())
    rho = 0.5 * (rho + rho.conj().T)
    trace = float(np.real(np.trace(rho)))
    if abs(trace) < 1e-12:
        raise TomographyError("linear inversion produced a traceless estimate")
    return rho / trace


# ---------------------------------------------------------------------------
# maximum likelihood


def _params_to_t(params: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    idx = 0
    for i in range(4):
        t[i, i] = params[idx]
        idx += 1
    for i in range(4):
        for j in range(i):
            t[i, j] = params[idx] + 1j * params[idx + 1]
            idx += 2
    return t


def _t_to_params(t: np.ndarray) -> np.ndarray:
    params = np.zeros(16)
    idx = 0
    for i in range(4):
        params[idx] = t[i, i].real
        idx += 1
    for i in range(4):
        for j in range(i):
            params[idx] = t[i, j].real
            params[idx + 1] = t[i, j].imag
            idx += 2
    return params


def _rho_from_t(t: np.ndarray) -> tuple[np.ndarray, float]:
    s = t.conj().T @ t
    tau = float(np.real(np.trace(s)))
    return s / tau, tau


def _profiled_ll(counts, exposures, probs) -> float:
    p = np.maximum(probs, _PROB_FLOOR)
    n_tot = counts.sum()
    scale = n_tot / float(exposures @ p)
    return float(counts @ np.log(scale * exposures * p) - n_tot)


def _saturated_ll(counts) -> float:
    pos = counts[counts > 0]
    return float(pos @ np.log(pos) - counts.sum())


def _misfit_and_grad(params: np.ndarray, counts, exposures, proj) -> tuple[float, np.ndarray]:
    """Half-deviance (saturated ll minus profiled ll) and its gradient.

    Computed term by term as mu*((1+e)*log1p(e) - e) with e = (n - mu)/mu,
    which stays accurate as the misfit approaches zero; the naive difference
    of two large log-likelihoods loses everything below ~1e-9.
    """
    t = _params_to_t(params)
    rho, tau = _rho_from_t(t)
    probs = np.real(np.einsum("kij,ji->k", proj, rho))
    p = np.maximum(probs, _PROB_FLOOR)
    scale = counts.sum() / float(exposures @ p)
    mu = scale * exposures * p
    excess = (counts - mu) / mu
    terms = np.where(counts > 0,
                     counts * np.log1p(np.where(counts > 0, excess, 0.0)), 0.0)
    misfit = float(terms.sum() + (mu - counts).sum())
    # d(misfit)/drho at the profiled scale (envelope theorem: the scale
    # derivative vanishes at the profiling optimum)
    weights = scale * exposures - counts / p
    g_rho = np.einsum("k,kij->ij", weights, proj)
    h = (g_rho - np.real(np.trace(g_rho @ rho)) * np.eye(4)) / tau
    m = t @ h
    grad = np.zeros(16)
    idx = 0
    for i in range(4):
        grad[idx] = 2.0 * m[i, i].real
        idx += 1
    for i in range(4):
        for j in range(i):
            grad[idx] = 2.0 * m[i, j].real
            grad[idx + 1] = 2.0 * m[i, j].imag
            idx += 2
    return misfit, grad


def _newton_polish(params: np.ndarray, counts, exposures, proj,
                   max_steps: int = 12) -> tuple[np.ndarray, list[float]]:
    """Damped Newton refinement on the analytic gradient.

    Line-search methods stall within ~1e-7 of the optimum along softly
    curved directions; a few Hessian steps (finite differences of the
    analytic gradient) reach the unique maximizer to near machine
    precision.  Only improving steps are accepted, so the misfit stays
    monotone.  The radial T-scale direction is exactly flat, hence the
    Levenberg damping.
    """
    f, g = _misfit_and_grad(params, counts, exposures, proj)
    accepted: list[float] = []
    h = 1e-6 * max(1.0, float(np.abs(params).max()))
    for _ in range(max_steps):
        gnorm = float(np.linalg.norm(g))
        if gnorm < 1e-13:
            break
        hess = np.zeros((16, 16))
        for i in range(16):
            up = params.copy()
            up[i] += h
            down = params.copy()
            down[i] -= h
            _, gp = _misfit_and_grad(up, counts, exposures, proj)
            _, gm = _misfit_and_grad(down, counts, exposures, proj)
            hess[:, i] = (gp - gm) / (2.0 * h)
        hess = 0.5 * (hess + hess.T)
        lam = 1e-10 * max(1.0, float(np.abs(np.diag(hess)).max()))
        improved = False
        for _ in range(24):
            try:
                step = np.linalg.solve(hess + lam * np.eye(16), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + step
            f_trial, g_trial = _misfit_and_grad(trial, counts, exposures, proj)
            if f_trial < f:
                params, f, g = trial, f_trial, g_trial
                accepted.append(f)
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
    return params, accepted


def _initial_t(dataset: TomographyDataset) -> np.ndarray:
    rho0 = linear_inversion(dataset)
    vals, vecs = np.linalg.eigh(rho0)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0.0:
        vals = np.ones(4)
    vals = vals / vals.sum()
    rho0 = (vecs * vals) @ vecs.conj().T
    # small ridge keeps the Cholesky factor full-rank at the start
    rho0 = 0.999 * rho0 + 0.001 * np.eye(4) / 4.0
    # lower-triangular T with T^dag T = rho0, via the exchange-reversed
    # standard Cholesky factorization
    exch = np.eye(4)[::-1]
    lower = np.linalg.cholesky(exch @ rho0 @ exch)
    return exch @ lower.conj().T @ exch


def mle_reconstruct(dataset: TomographyDataset, tol: float = 1e-10,
                    max_iter: int = 5000) -> ReconstructionResult:
    """Maximum-likelihood density matrix under per-setting Poisson counts.

    Quasi-Newton ascent (analytic gradient) on the 16 Cholesky parameters;
    the line search only accepts improving iterates, so the recorded
    log-likelihood history is non-decreasing.  Stops when the relative
    log-likelihood change falls below tol.
    """
    if tol <= 0.0:
        raise TomographyError("tol must be positive")
    if dataset.counts.sum() <= 0.0:
        raise TomographyError("all-zero dataset cannot be reconstructed")
    proj = dataset.projectors()
    counts, exposures = dataset.counts, dataset.exposures
    # Optimizing the misfit to the saturated model instead of the raw
    # likelihood keeps relative tolerances on the meaningful scale: the raw
    # value carries a large data-dependent offset.
    ll_saturated = _saturated_ll(counts)

    def objective(params: np.ndarray) -> tuple[float, np.ndarray]:
        return _misfit_and_grad(params, counts, exposures, proj)

    misfits: list[float] = []

    def record(params: np.ndarray) -> None:
        misfit, _ = _misfit_and_grad(params, counts, exposures, proj)
        misfits.append(misfit)

    params0 = _t_to_params(_initial_t(dataset))
    record(params0)
    opt = minimize(objective, params0, jac=True, method="L-BFGS-B",
                   callback=record,
                   options={"ftol": tol, "gtol": 1e-14, "maxiter": max_iter})
    converged = bool(opt.status == 0)
    if opt.status == 2:
        # line search stalled: accept as converged when no step of any size
        # could improve on the recorded minimum (misfit already monotone)
        converged = len(misfits) >= 2 and misfits[-1] <= min(misfits[:-1]) + tol
    params, polished = _newton_polish(opt.x, counts, exposures, proj)
    misfits.extend(polished)
    final_misfit = misfits[-1] if misfits else float(opt.fun)
    rho, _ = _rho_from_t(_params_to_t(params))
    rho = 0.5 * (rho + rho.conj().T)
    history = tuple(ll_saturated - m for m in misfits)
    return ReconstructionResult(
        TwoQubitState(rho), ll_saturated - final_misfit, int(opt.nit) + len(polished),
        converged, dataset.gram_condition(), tuple(history))


# ---------------------------------------------------------------------------
# serialization


def save_reconstruction(result: ReconstructionResult, path: str | Path) -> None:
    payload = {
        "matrix": [[[float(z.real), float(z.imag)] for z in row]
                   for row in result.rho.matrix],
        "log_likelihood": result.log_likelihood,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "gram_condition": result.gram_condition,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_reconstruction(path: str | Path) -> ReconstructionResult:
    payload = json.loads(Path(path).read_text())
    try:
        matrix = np.array([[complex(re, im) for re, im in row]
                           for row in payload["matrix"]])
        result = ReconstructionResult(
            TwoQubitState(matrix), float(payload["log_likelihood"]),
            int(payload["iterations"]), bool(payload["converged"]),
            float(payload.get("gram_condition", math.nan)))
    except (KeyError, TypeError, ValueError) as exc:
        raise TomographyError(f"bad reconstruction file {path}: {exc}") from None
    return result
