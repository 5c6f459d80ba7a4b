"""Laguerre-Gaussian mode fields and the fork-hologram analyzer model.

Conventions: LG_pm(r, phi) = R_pm(r) exp(i m phi) at the beam waist plane,
with 2D norm  integral |LG|^2 r dr dphi = 1.  Azimuthal phase exp(+i m phi);
a hologram of charge q is a thin phase mask exp(i q phi') about its (possibly
displaced) dislocation point, first diffraction order isolated ideally.

The analyzer accepted mode is the fiber's Gaussian back-propagated through
the hologram.  Projecting it onto the {LG00, LG0q} subspace gives the
analyzer's effective qubit state; weight outside that subspace is reported
as leakage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import eval_genlaguerre

__all__ = [
    "GridError",
    "AnalyzerError",
    "LGMode",
    "PolarGrid",
    "TransverseField",
    "AnalyzerSetting",
    "AnalyzerState",
    "polar_grid",
    "default_grid",
    "evaluate_mode",
    "overlap",
    "analyzer_state",
    "balanced_displacement",
    "distinction_ratio",
    "radial_congruence",
    "orthogonal_setting",
    "radial_mismatch_penalty",
    "VORTEX_EMISSION_WAIST_RATIO",
]

DEFAULT_GRID_POINTS = 256
MIN_GRID_POINTS = 64
GRID_RADIUS_WAISTS = 6.0
MAX_LEAKAGE = 0.5

# Emission waist of the unit-charge channel relative to the fiber-matched
# Gaussian waist.  1/sqrt(2) maximizes the p=0 fiber coupling of a vortex
# mode (coupling probability 27/32... computed: 8/(3*sqrt(3)) amplitude),
# the aligned-collection geometry assumed by the radial-mismatch model.
VORTEX_EMISSION_WAIST_RATIO = 1.0 / math.sqrt(2.0)


class GridError(ValueError):
    """Raised for inadequate or mismatched quadrature grids."""


class AnalyzerError(ValueError):
    """Raised when an analyzer setting leaves the two-mode description."""


@dataclass(frozen=True)
class LGMode:
    """Laguerre-Gaussian mode LG_pm with waist in micrometers."""

    radial_index: int
    azimuthal_index: int
    waist: float

    def __post_init__(self) -> None:
        if self.radial_index < 0:
            raise ValueError("radial index p must be >= 0")
        if not (self.waist > 0.0 and math.isfinite(self.waist)):
            raise ValueError("waist must be positive and finite")


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Polar quadrature grid: Gauss-Legendre radial nodes, uniform angles."""

    radial_nodes: np.ndarray
    radial_weights: np.ndarray
    angular_nodes: np.ndarray
    r_max: float

    @property
    def n_radial(self) -> int:
        return int(self.radial_nodes.size)

    @property
    def n_angular(self) -> int:
        return int(self.angular_nodes.size)

    @property
    def d_phi(self) -> float:
        return 2.0 * math.pi / self.n_angular

    def same_as(self, other: "PolarGrid") -> bool:
        return (
            self.radial_nodes.shape == other.radial_nodes.shape
            and self.angular_nodes.shape == other.angular_nodes.shape
            and np.array_equal(self.radial_nodes, other.radial_nodes)
            and np.array_equal(self.angular_nodes, other.angular_nodes)
        )


def polar_grid(r_max: float, n_radial: int = DEFAULT_GRID_POINTS,
               n_angular: int = DEFAULT_GRID_POINTS) -> PolarGrid:
    if r_max <= 0.0:
        raise GridError("r_max must be positive")
    if n_radial < MIN_GRID_POINTS or n_angular < MIN_GRID_POINTS:
        raise GridError(f"grid must be at least {MIN_GRID_POINTS}x{MIN_GRID_POINTS}")
    x, w = leggauss(n_radial)
    nodes = 0.5 * r_max * (x + 1.0)
    weights = 0.5 * r_max * w
    phi = np.arange(n_angular) * (2.0 * math.pi / n_angular)
    return PolarGrid(nodes, weights, phi, float(r_max))


@lru_cache(maxsize=32)
def _cached_grid(r_max: float, n_radial: int, n_angular: int) -> PolarGrid:
    return polar_grid(r_max, n_radial, n_angular)


def default_grid(max_waist: float, n_radial: int = DEFAULT_GRID_POINTS,
                 n_angular: int = DEFAULT_GRID_POINTS) -> PolarGrid:
    """Grid covering GRID_RADIUS_WAISTS times the largest waist involved."""
    return _cached_grid(GRID_RADIUS_WAISTS * max_waist, n_radial, n_angular)


@dataclass(frozen=True, eq=False)
class TransverseField:
    """Complex field sampled on a polar grid, amplitudes shape (n_r, n_phi)."""

    grid: PolarGrid
    amplitudes: np.ndarray

    def norm_squared(self) -> float:
        g = self.grid
        radial = np.sum(np.abs(self.amplitudes) ** 2, axis=1) * g.d_phi
        return float(np.sum(radial * g.radial_nodes * g.radial_weights))


def radial_profile(mode: LGMode, r: np.ndarray) -> np.ndarray:
    """Normalized radial factor R_pm(r); 2*pi*integral R^2 r dr = 1."""
    p, m, w = mode.radial_index, abs(mode.azimuthal_index), mode.waist
    norm = math.sqrt(2.0 * math.factorial(p) / (math.pi * math.factorial(p + m))) / w
    x = 2.0 * r * r / (w * w)
    return norm * (np.sqrt(x)) ** m * eval_genlaguerre(p, m, x) * np.exp(-x / 2.0)


def _check_grid_for_waist(grid: PolarGrid, waist: float) -> None:
    if grid.r_max < GRID_RADIUS_WAISTS * waist - 1e-9:
        raise GridError(
            f"grid radius {grid.r_max:.1f} um covers less than "
            f"{GRID_RADIUS_WAISTS:g} waists of {waist:.1f} um"
        )
    mean_spacing = grid.r_max / grid.n_radial
    if mean_spacing > waist / 8.0:
        raise GridError(
            f"radial spacing {mean_spacing:.2f} um exceeds waist/8 = {waist / 8.0:.2f} um"
        )


def evaluate_mode(mode: LGMode, grid: PolarGrid) -> TransverseField:
    _check_grid_for_waist(grid, mode.waist)
    radial = radial_profile(mode, grid.radial_nodes)
    angular = np.exp(1j * mode.azimuthal_index * grid.angular_nodes)
    return TransverseField(grid, radial[:, None] * angular[None, :])


def overlap(a: TransverseField, b: TransverseField) -> complex:
    """Discrete <a|b> = integral conj(a) b r dr dphi."""
    if not a.grid.same_as(b.grid):
        raise GridError("fields live on different grids")
    g = a.grid
    radial = np.sum(a.amplitudes.conj() * b.amplitudes, axis=1) * g.d_phi
    return complex(np.sum(radial * g.radial_nodes * g.radial_weights))


@dataclass(frozen=True)
class AnalyzerSetting:
    """Fork hologram + single-mode fiber analyzer.

    displacement is the dislocation offset from the beam axis in units of the
    fiber-matched Gaussian waist; orientation theta puts relative phase
    exp(i theta) between the Gaussian and vortex components of the analyzed
    state (rotating the physical dislocation azimuth is equivalent).
    """

    hologram_charge: int
    displacement: float
    fiber_waist: float = 140.0
    orientation: float = 0.0
    diffraction_order: int = 1

    def __post_init__(self) -> None:
        if self.hologram_charge not in (-1, 0, 1):
            raise ValueError("hologram_charge must be -1, 0, or +1")
        if self.displacement < 0.0 or not math.isfinite(self.displacement):
            raise ValueError("displacement must be >= 0")
        if not (self.fiber_waist > 0.0 and math.isfinite(self.fiber_waist)):
            raise ValueError("fiber_waist must be positive")
        if self.diffraction_order != 1:
            raise ValueError("only the first diffraction order is modeled")


@dataclass(frozen=True)
class AnalyzerState:
    """Effective analyzer qubit state alpha|0> + beta|1> plus leakage weight."""

    alpha: complex
    beta: complex
    leakage: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)


def _accepted_mode(setting: AnalyzerSetting, grid: PolarGrid) -> np.ndarray:
    """Fiber Gaussian back-propagated through the displaced fork hologram.

    Dislocation placed on the +x axis; orientation is applied downstream as a
    phase on beta (rotation covariance).
    """
    gauss = radial_profile(LGMode(0, 0, setting.fiber_waist), grid.radial_nodes)
    r = grid.radial_nodes[:, None]
    phi = grid.angular_nodes[None, :]
    x = r * np.cos(phi) - setting.displacement * setting.fiber_waist
    y = r * np.sin(phi)
    phase = np.arctan2(y, x)
    return gauss[:, None] * np.exp(1j * setting.hologram_charge * phase)


def _subspace_amplitudes(setting: AnalyzerSetting, grid: PolarGrid) -> tuple[complex, complex]:
    """Raw projections (A0, A1) of the accepted mode onto {LG00, LG0q}."""
    u = _accepted_mode(setting, grid)
    field = TransverseField(grid, u)
    mode0 = evaluate_mode(LGMode(0, 0, setting.fiber_waist), grid)
    mode1 = evaluate_mode(LGMode(0, setting.hologram_charge, setting.fiber_waist), grid)
    return overlap(mode0, field), overlap(mode1, field)


@lru_cache(maxsize=256)
def _analyzer_amplitudes_cached(charge: int, displacement: float, fiber_waist: float,
                                n_radial: int, n_angular: int) -> tuple[complex, complex]:
    setting = AnalyzerSetting(charge, displacement, fiber_waist)
    grid = _cached_grid(GRID_RADIUS_WAISTS * fiber_waist, n_radial, n_angular)
    return _subspace_amplitudes(setting, grid)


def analyzer_state(setting: AnalyzerSetting, grid: PolarGrid | None = None) -> AnalyzerState:
    """Effective qubit state of the analyzer, renormalized in the 2D subspace.

    Raises AnalyzerError when more than half the accepted mode falls outside
    the {LG00, LG0q} subspace (no longer a faithful qubit measurement).
    """
    if setting.hologram_charge == 0:
        # Blank hologram: the fiber Gaussian is the |0> mode exactly; the
        # azimuthal integral against any vortex mode vanishes identically.
        return AnalyzerState(1.0 + 0.0j, 0.0j, 0.0)
    if grid is None:
        a0, a1 = _analyzer_amplitudes_cached(
            setting.hologram_charge, setting.displacement, setting.fiber_waist,
            DEFAULT_GRID_POINTS, DEFAULT_GRID_POINTS)
    else:
        a0, a1 = _subspace_amplitudes(setting, grid)
    weight = abs(a0) ** 2 + abs(a1) ** 2
    leakage = 1.0 - weight
    if leakage > MAX_LEAKAGE:
        raise AnalyzerError(
            f"leakage {leakage:.3f} exceeds {MAX_LEAKAGE}; analyzer is not "
            "two-dimensional at this setting"
        )
    scale = 1.0 / math.sqrt(weight)
    alpha = abs(a0) * scale
    beta = abs(a1) * scale * np.exp(1j * setting.orientation)
    return AnalyzerState(complex(alpha), complex(beta), float(leakage))


@lru_cache(maxsize=64)
def balanced_displacement(fiber_waist: float = 140.0, charge: int = 1,
                          n_radial: int = DEFAULT_GRID_POINTS,
                          n_angular: int = DEFAULT_GRID_POINTS) -> float:
    """Dislocation offset (in waists) where |alpha| = |beta|."""
    if charge == 0:
        raise AnalyzerError("a blank hologram never balances the two channels")

    def imbalance(d: float) -> float:
        a0, a1 = _analyzer_amplitudes_cached(charge, d, fiber_waist, n_radial, n_angular)
        return abs(a0) - abs(a1)

    return float(brentq(imbalance, 1e-4, 4.0, xtol=1e-10, rtol=1e-12))


def distinction_ratio(setting: AnalyzerSetting, grid: PolarGrid | None = None) -> float:
    """Power rejection |beta|^2/|alpha|^2 of an on-axis vortex analyzer."""
    if setting.hologram_charge == 0:
        raise AnalyzerError("distinction ratio is defined for vortex holograms")
    if grid is None:
        a0, a1 = _analyzer_amplitudes_cached(
            setting.hologram_charge, setting.displacement, setting.fiber_waist,
            DEFAULT_GRID_POINTS, DEFAULT_GRID_POINTS)
    else:
        a0, a1 = _subspace_amplitudes(setting, grid)
    return abs(a1) ** 2 / max(abs(a0) ** 2, 1e-300)


def _azimuthal_component(u: np.ndarray, grid: PolarGrid, m: int) -> np.ndarray:
    """Radial profile of the exp(i m phi) component of u."""
    phase = np.exp(-1j * m * grid.angular_nodes)
    return (u * phase[None, :]).sum(axis=1) * grid.d_phi / (2.0 * math.pi)


def _radial_inner(a: np.ndarray, b: np.ndarray, grid: PolarGrid) -> complex:
    return complex(2.0 * math.pi * np.sum(a.conj() * b * grid.radial_nodes * grid.radial_weights))


@lru_cache(maxsize=256)
def _congruence_cached(charge: int, displacement: float, fiber_waist: float,
                       n_radial: int, n_angular: int) -> float:
    if charge == 0:
        return 1.0
    grid = _cached_grid(GRID_RADIUS_WAISTS * fiber_waist, n_radial, n_angular)
    setting = AnalyzerSetting(charge, displacement, fiber_waist)
    u = _accepted_mode(setting, grid)
    # Logical profiles define the channel weights; the emitted profile of the
    # vortex channel carries the p=0-optimal waist (aligned collection).
    logical = {
        0: radial_profile(LGMode(0, 0, fiber_waist), grid.radial_nodes),
        charge: radial_profile(LGMode(0, charge, fiber_waist), grid.radial_nodes),
    }
    emitted = {
        0: logical[0],
        charge: radial_profile(
            LGMode(0, charge, fiber_waist * VORTEX_EMISSION_WAIST_RATIO),
            grid.radial_nodes),
    }
    total = 0.0
    congruence = 0.0
    for m in (0, charge):
        rho = _azimuthal_component(u, grid, m)
        rho_norm = _radial_inner(rho, rho, grid).real
        if rho_norm <= 1e-30:
            continue
        weight = abs(_radial_inner(logical[m], rho, grid)) ** 2
        ref = emitted[m]
        ref_norm = _radial_inner(ref, ref, grid).real
        match = abs(_radial_inner(rho, ref, grid)) ** 2 / (rho_norm * ref_norm)
        total += weight
        congruence += weight * match
    if total <= 0.0:
        raise AnalyzerError("accepted mode has no weight in the analysis subspace")
    return congruence / total


def radial_congruence(setting: AnalyzerSetting,
                      n_radial: int = DEFAULT_GRID_POINTS,
                      n_angular: int = DEFAULT_GRID_POINTS) -> float:
    """Channel-weighted match between selected and emitted radial profiles.

    1.0 means the single-mode fiber's p=0 projection is lossless relative to
    the photon actually delivered in each OAM channel; smaller values flag a
    radial shape mismatch that suppresses the measured coincidence rate.
    """
    return _congruence_cached(setting.hologram_charge, setting.displacement,
                              setting.fiber_waist, n_radial, n_angular)


def orthogonal_setting(setting: AnalyzerSetting) -> AnalyzerSetting:
    """The analyzer measuring the orthogonal qubit state in the same basis."""
    if setting.displacement == 0.0:
        if setting.hologram_charge == 0:
            return replace(setting, hologram_charge=1)
        return replace(setting, hologram_charge=0)
    return replace(setting, orientation=setting.orientation + math.pi)


def radial_mismatch_penalty(setting_a: AnalyzerSetting, setting_b: AnalyzerSetting,
                            n_radial: int = DEFAULT_GRID_POINTS,
                            n_angular: int = DEFAULT_GRID_POINTS) -> float:
    """Relative coincidence-probability error from the p=0 fiber projection.

    Referenced within each arm's measurement basis: the best-matched analyzer
    of the {setting, orthogonal} pair defines the basis normalization, so a
    pair of identical-profile analyzers scores 0 and a basis whose outcomes
    select different radial shapes (Gaussian vs vortex channel) scores the
    relative suppression of the worse-matched outcome.
    """
    def factor(s: AnalyzerSetting) -> float:
        f = radial_congruence(s, n_radial, n_angular)
        f_ref = max(f, radial_congruence(orthogonal_setting(s), n_radial, n_angular))
        return f / f_ref

    penalty = 1.0 - factor(setting_a) * factor(setting_b)
    return float(min(max(penalty, 0.0), 1.0))
