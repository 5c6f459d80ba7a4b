"""Forward model of the coincidence experiment.

Turns a configured source state into the data the apparatus records: phase
damping on the atomic qubit over the write-read delay, a white-noise
admixture from accidental coincidences, per-setting Poisson counts, and
start-stop delay histograms.  All randomness flows from (rng_seed, stream,
row) so identical inputs reproduce identical tables byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .lg_modes import AnalyzerSetting, analyzer_state, balanced_displacement, radial_mismatch_penalty
from .quantum_core import (
    MeasBasisState,
    PureTwoQubit,
    StateError,
    TwoQubitState,
    born_probability,
)

__all__ = [
    "ConfigError",
    "SimulationError",
    "ExperimentConfig",
    "CoincidenceRow",
    "CoincidenceTable",
    "CoincidenceHistogram",
    "G2Estimate",
    "effective_state",
    "coincidence_probability",
    "simulate_counts",
    "simulate_histogram",
    "g2_estimate",
    "analyzer_for_label",
    "setting_to_string",
    "setting_from_string",
    "write_table_csv",
    "read_table_csv",
    "write_histogram_csv",
    "read_histogram_csv",
    "parse_kv_file",
    "config_from_mapping",
    "config_to_text",
]

TABLE_HEADER = ["setting_as", "setting_s", "coincidences", "singles_as", "singles_s", "duration_s"]
HISTOGRAM_HEADER = ["bin_ns", "count"]


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration input."""


class SimulationError(RuntimeError):
    """Raised when the forward model cannot produce data."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Apparatus parameters.

    Times: delay_dt in ns, dephasing_time in us, acquisition_time in s.
    Efficiencies are probabilities; retrieval_and_transmission_s lumps the
    read-out arm (retrieval x transmission x detector) and is calibrated so
    the default config reproduces the bench coincidence rate of ~2 s^-1 at
    ~3.1e2 s^-1 anti-Stokes singles.  duty_cycle is bookkeeping only: the
    repetition rate already counts trials per wall-clock second.
    """

    excitation_probability: float = 6.6e-3
    transmission_efficiency_as: float = 0.17
    detector_efficiency: float = 0.62
    retrieval_and_transmission_s: float = 9.695146175e-3
    repetition_rate: float = 4.5e5
    duty_cycle: float = 0.5
    delay_dt: float = 100.0
    dephasing_time: float = 4.1188107375
    background_rate_as: float = 110.0
    background_rate_s: float = 112.0510127
    acquisition_time: float = 100.0
    rng_seed: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.excitation_probability <= 0.1):
            raise ConfigError("excitation_probability must lie in (0, 0.1]")
        for name in ("transmission_efficiency_as", "detector_efficiency",
                     "retrieval_and_transmission_s"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1]")
        if not (self.repetition_rate > 0.0):
            raise ConfigError("repetition_rate must be positive")
        if not (0.0 < self.duty_cycle <= 1.0):
            raise ConfigError("duty_cycle must lie in (0, 1]")
        if self.delay_dt < 0.0:
            raise ConfigError("delay_dt must be >= 0")
        if not (self.dephasing_time > 0.0):
            raise ConfigError("dephasing_time must be positive (may be inf)")
        if self.background_rate_as < 0.0 or self.background_rate_s < 0.0:
            raise ConfigError("background rates must be >= 0")
        if self.acquisition_time < 0.0:
            raise ConfigError("acquisition_time must be >= 0")
        if not (isinstance(self.rng_seed, int) and self.rng_seed >= 0):
            raise ConfigError("rng_seed must be a non-negative integer")

    @property
    def eta_as(self) -> float:
        return self.transmission_efficiency_as * self.detector_efficiency

    @property
    def eta_s(self) -> float:
        return self.retrieval_and_transmission_s


# ---------------------------------------------------------------------------
# state preparation


def effective_state(config: ExperimentConfig, source: PureTwoQubit) -> TwoQubitState:
    """Source state after write-read dephasing and accidental admixture.

    Phase damping acts on the atomic qubit only: coherences between atomic
    |0> and |1> shrink by exp(-delay_dt/dephasing_time).  Accidental
    coincidences enter as a white-noise admixture whose weight is the
    accidental fraction of the per-trial pair-detection probability.
    """
    rho = source.density_matrix().matrix.copy()
    kappa = math.exp(-(config.delay_dt * 1e-3) / config.dephasing_time)
    atom_bit = np.array([0, 1, 0, 1])
    damp = np.where(atom_bit[:, None] != atom_bit[None, :], kappa, 1.0)
    rho *= damp

    p = config.excitation_probability
    s_as = p * config.eta_as + config.background_rate_as / config.repetition_rate
    s_s = p * config.eta_s + config.background_rate_s / config.repetition_rate
    true_pair = p * config.eta_as * config.eta_s
    # uncorrelated click combinations only; background-free runs admix nothing
    accidental = max(s_as * s_s - true_pair * p, 0.0)
    w = accidental / (accidental + true_pair)
    rho = (1.0 - w) * rho + w * np.eye(4) / 4.0
    return TwoQubitState(rho)


# ---------------------------------------------------------------------------
# settings


_LABELS = ("zero", "one", "plus", "minus", "u", "d")
_ORIENTATIONS = {"plus": 0.0, "minus": math.pi, "u": math.pi / 2.0, "d": -math.pi / 2.0}


def analyzer_for_label(label: str, fiber_waist: float = 140.0) -> AnalyzerSetting:
    """Hologram/fiber realization of each logical analysis state."""
    if label == "zero":
        return AnalyzerSetting(0, 0.0, fiber_waist)
    if label == "one":
        return AnalyzerSetting(1, 0.0, fiber_waist)
    if label in _ORIENTATIONS:
        d = balanced_displacement(fiber_waist)
        return AnalyzerSetting(1, d, fiber_waist, orientation=_ORIENTATIONS[label])
    raise StateError(f"unknown basis label {label!r}")


def _coerce_setting(setting) -> tuple[MeasBasisState, AnalyzerSetting | None, str]:
    """Accept a label, MeasBasisState, or AnalyzerSetting; return the
    projective qubit state, the optics realization when known, and the
    canonical string id used in CSV files."""
    if isinstance(setting, str):
        return MeasBasisState.from_label(setting), analyzer_for_label(setting), setting
    if isinstance(setting, MeasBasisState):
        optics = analyzer_for_label(setting.label) if setting.label in _LABELS else None
        return setting, optics, setting_to_string(setting)
    if isinstance(setting, AnalyzerSetting):
        st = analyzer_state(setting)
        meas = MeasBasisState(st.alpha, st.beta)
        return meas, setting, setting_to_string(setting)
    raise StateError(f"cannot interpret measurement setting {setting!r}")


def setting_to_string(setting) -> str:
    if isinstance(setting, str):
        return setting
    if isinstance(setting, MeasBasisState):
        if setting.label is not None:
            return setting.label
        return "custom:%.17g%+.17gj,%.17g%+.17gj" % (
            setting.alpha.real, setting.alpha.imag, setting.beta.real, setting.beta.imag)
    if isinstance(setting, AnalyzerSetting):
        return "q%d:d%.17g:t%.17g:w%.17g" % (
            setting.hologram_charge, setting.displacement,
            setting.orientation, setting.fiber_waist)
    raise StateError(f"cannot serialize setting {setting!r}")


_ANALYZER_RE = re.compile(r"^q(-?\d+):d([^:]+):t([^:]+):w([^:]+)$")
_CUSTOM_RE = re.compile(r"^custom:([^,]+),(.+)$")


def setting_from_string(text: str):
    if text in _LABELS:
        return text
    m = _ANALYZER_RE.match(text)
    if m:
        return AnalyzerSetting(int(m.group(1)), float(m.group(2)),
                               orientation=float(m.group(3)), fiber_waist=float(m.group(4)))
    m = _CUSTOM_RE.match(text)
    if m:
        return MeasBasisState(complex(m.group(1)), complex(m.group(2)))
    raise StateError(f"cannot parse measurement setting {text!r}")


# ---------------------------------------------------------------------------
# rates


def _marginals(state: TwoQubitState, a: MeasBasisState, b: MeasBasisState) -> tuple[float, float]:
    rho = state.matrix
    rho_as = np.trace(rho.reshape(2, 2, 2, 2), axis1=1, axis2=3)
    rho_s = np.trace(rho.reshape(2, 2, 2, 2), axis1=0, axis2=2)
    pa = float(np.real(a.vector.conj() @ rho_as @ a.vector))
    pb = float(np.real(b.vector.conj() @ rho_s @ b.vector))
    return min(max(pa, 0.0), 1.0), min(max(pb, 0.0), 1.0)


def _is_oam_eigen_pair(opt_a: AnalyzerSetting | None, opt_b: AnalyzerSetting | None) -> bool:
    return (opt_a is not None and opt_b is not None
            and opt_a.displacement == 0.0 and opt_b.displacement == 0.0)


def _pair_rates(state: TwoQubitState, setting_a, setting_b, config: ExperimentConfig,
                apply_radial_penalty: bool) -> tuple[float, float, float]:
    """Per-trial probabilities (coincidence, singles_as, singles_s)."""
    meas_a, opt_a, _ = _coerce_setting(setting_a)
    meas_b, opt_b, _ = _coerce_setting(setting_b)
    born = born_probability(state, meas_a, meas_b)
    marg_a, marg_b = _marginals(state, meas_a, meas_b)

    p = config.excitation_probability
    s_a = p * marg_a * config.eta_as + config.background_rate_as / config.repetition_rate
    s_b = p * marg_b * config.eta_s + config.background_rate_s / config.repetition_rate

    penalty = 0.0
    if apply_radial_penalty and _is_oam_eigen_pair(opt_a, opt_b):
        penalty = radial_mismatch_penalty(opt_a, opt_b)
    true_pair = p * born * config.eta_as * config.eta_s * (1.0 - penalty)
    # Accidental floor: uncorrelated click combinations (photon x background
    # and background x background); the correlated product is excluded so an
    # ideal background-free run has no floor.
    accidental = s_a * s_b - (p * marg_a * config.eta_as) * (p * marg_b * config.eta_s)
    coincidence = true_pair + max(accidental, 0.0)
    if coincidence > 1.0 or s_a > 1.0 or s_b > 1.0:
        raise SimulationError("per-trial probability exceeds 1; config out of regime")
    return coincidence, s_a, s_b


def coincidence_probability(state: TwoQubitState | PureTwoQubit, setting_a, setting_b,
                            config: ExperimentConfig,
                            apply_radial_penalty: bool = True) -> float:
    """Per-trial coincidence probability for one setting pair."""
    if isinstance(state, PureTwoQubit):
        state = state.density_matrix()
    coincidence, _, _ = _pair_rates(state, setting_a, setting_b, config, apply_radial_penalty)
    return coincidence


# ---------------------------------------------------------------------------
# counts


@dataclass(frozen=True)
class CoincidenceRow:
    setting_as: str
    setting_s: str
    coincidences: int
    singles_as: int
    singles_s: int
    duration_s: float

    def __post_init__(self) -> None:
        for name in ("coincidences", "singles_as", "singles_s"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 0):
                raise SimulationError(f"{name} must be a non-negative integer")
        if self.coincidences > min(self.singles_as, self.singles_s):
            raise SimulationError("coincidences exceed singles; impossible record")
        if self.duration_s < 0.0:
            raise SimulationError("duration_s must be >= 0")


@dataclass(frozen=True)
class CoincidenceTable:
    rows: tuple[CoincidenceRow, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))

    def row_for(self, setting_as: str, setting_s: str) -> CoincidenceRow:
        for row in self.rows:
            if row.setting_as == setting_as and row.setting_s == setting_s:
                return row
        raise KeyError(f"no row for ({setting_as}, {setting_s})")


def _row_rng(config: ExperimentConfig, stream: int, row: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.rng_seed, stream, row]))


def simulate_counts(state_or_source, settings, config: ExperimentConfig,
                    apply_radial_penalty: bool = True, stream: int = 0) -> CoincidenceTable:
    """Poisson coincidence/singles table over the given setting pairs.

    settings: iterable of (setting_as, setting_s); each entry may be a basis
    label, a MeasBasisState, or an AnalyzerSetting.  Deterministic in
    (config, stream): row i uses the RNG stream (rng_seed, stream, i).
    """
    settings = list(settings)
    if not settings:
        raise SimulationError("settings list is empty")
    if isinstance(state_or_source, PureTwoQubit):
        state = effective_state(config, state_or_source)
    else:
        state = state_or_source
    trials = config.acquisition_time * config.repetition_rate
    rows = []
    for i, (sa, sb) in enumerate(settings):
        coincidence, s_a, s_b = _pair_rates(state, sa, sb, config, apply_radial_penalty)
        rng = _row_rng(config, stream, i)
        n_c = int(rng.poisson(coincidence * trials))
        n_a = n_c + int(rng.poisson(max(s_a * trials - coincidence * trials, 0.0)))
        n_b = n_c + int(rng.poisson(max(s_b * trials - coincidence * trials, 0.0)))
        rows.append(CoincidenceRow(
            setting_to_string(sa), setting_to_string(sb),
            n_c, n_a, n_b, config.acquisition_time))
    return CoincidenceTable(tuple(rows))


# ---------------------------------------------------------------------------
# histogram / g2


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Start-stop delay histogram over +/- n_windows repetition windows.

    counts has (2*n_windows + 1) * bins_per_window entries; bin i spans
    [start_ns + i*bin_width_ns, start_ns + (i+1)*bin_width_ns).  The window
    period is carried here (not in the CSV) because g2 estimation needs the
    repetition structure.
    """

    bin_width_ns: float
    counts: np.ndarray
    window_period_ns: float
    n_windows: int

    def __post_init__(self) -> None:
        if self.n_windows < 2:
            raise SimulationError("histogram needs at least 2 off-peak windows per side")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size % (2 * self.n_windows + 1) != 0:
            raise SimulationError("counts length must be a multiple of the window count")
        if np.any(counts < 0):
            raise SimulationError("histogram counts must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def bins_per_window(self) -> int:
        return self.counts.size // (2 * self.n_windows + 1)

    @property
    def start_ns(self) -> float:
        return -(self.n_windows + 0.5) * self.bins_per_window * self.bin_width_ns

    @property
    def bin_edges_ns(self) -> np.ndarray:
        return self.start_ns + np.arange(self.counts.size) * self.bin_width_ns

    def window_totals(self) -> np.ndarray:
        return self.counts.reshape(2 * self.n_windows + 1, self.bins_per_window).sum(axis=1)


def simulate_histogram(state_or_source, config: ExperimentConfig, duration: float,
                       setting_pair=("zero", "zero"), n_windows: int = 15,
                       bin_width_ns: float = 1.6, apply_radial_penalty: bool = True,
                       stream: int = 2) -> CoincidenceHistogram:
    """Start-stop histogram for one setting pair over `duration` seconds.

    True pairs fall in the central repetition window at the write-read delay
    (1-bin timing jitter); accidentals land uniformly across all windows at
    the product of the singles rates.
    """
    if duration < 0.0:
        raise SimulationError("duration must be >= 0")
    if isinstance(state_or_source, PureTwoQubit):
        state = effective_state(config, state_or_source)
    else:
        state = state_or_source
    coincidence, s_a, s_b = _pair_rates(state, setting_pair[0], setting_pair[1],
                                        config, apply_radial_penalty)
    period_ns = 1e9 / config.repetition_rate
    bins_per_window = int(period_ns // bin_width_ns)
    if bins_per_window < 3:
        raise SimulationError("bin width too coarse for the repetition period")
    n_bins = (2 * n_windows + 1) * bins_per_window

    trials = duration * config.repetition_rate
    # clicks from different trials are uncorrelated, so every window sees the
    # full singles product; the peak window adds the rest of the coincidence
    accidental = s_a * s_b
    true_mean = max(coincidence - accidental, 0.0) * trials
    acc_per_bin = accidental * trials / bins_per_window

    rng = _row_rng(config, stream, 0)
    counts = rng.poisson(acc_per_bin, size=n_bins).astype(np.int64)

    # place the true pairs at the write-read delay inside the center window
    delay = config.delay_dt
    window_span = bins_per_window * bin_width_ns
    if delay >= window_span / 2.0 - bin_width_ns:
        raise SimulationError("write-read delay falls outside the center window")
    half_span = (n_windows + 0.5) * window_span
    peak_bin = int((delay + half_span) // bin_width_ns)
    n_true = rng.poisson(true_mean)
    jitter = rng.multinomial(n_true, [0.25, 0.5, 0.25])
    for offset, extra in zip((-1, 0, 1), jitter):
        idx = peak_bin + offset
        if 0 <= idx < n_bins:
            counts[idx] += extra
    return CoincidenceHistogram(bin_width_ns, counts, period_ns, n_windows)


@dataclass(frozen=True)
class G2Estimate:
    value: float
    stderr: float
    peak_total: int
    off_peak_mean: float


def g2_estimate(histogram: CoincidenceHistogram, peak_window: int | None = None) -> G2Estimate:
    """Normalized peak correlation: peak-window total over mean off-peak
    total, with Poisson error propagation.

    The peak window defaults to the center one (the apparatus gates the stop
    detector around the known write-read delay); picking the maximum instead
    would bias a featureless histogram upward.
    """
    totals = histogram.window_totals()
    if totals.size < 4:
        raise SimulationError("need at least 3 off-peak windows")
    peak_idx = histogram.n_windows if peak_window is None else int(peak_window)
    if not (0 <= peak_idx < totals.size):
        raise SimulationError("peak window index out of range")
    peak = float(totals[peak_idx])
    off = np.delete(totals, peak_idx)
    off_sum = float(off.sum())
    off_mean = off_sum / off.size
    if peak == 0.0:
        return G2Estimate(0.0, math.inf, 0, off_mean)
    if off_sum == 0.0:
        raise SimulationError("zero off-peak counts; normalization undefined")
    value = peak / off_mean
    stderr = value * math.sqrt(1.0 / peak + 1.0 / off_sum)
    return G2Estimate(value, stderr, int(peak), off_mean)


# ---------------------------------------------------------------------------
# file formats


def write_table_csv(table: CoincidenceTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_HEADER)
        for row in table.rows:
            writer.writerow([row.setting_as, row.setting_s, row.coincidences,
                             row.singles_as, row.singles_s, "%.17g" % row.duration_s])


def read_table_csv(path: str | Path) -> CoincidenceTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TABLE_HEADER:
            raise ConfigError(f"bad coincidence table header: {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != 6:
                raise ConfigError(f"bad coincidence table row: {rec}")
            rows.append(CoincidenceRow(rec[0], rec[1], int(rec[2]), int(rec[3]),
                                       int(rec[4]), float(rec[5])))
    return CoincidenceTable(tuple(rows))


def write_histogram_csv(histogram: CoincidenceHistogram, path: str | Path) -> None:
    edges = histogram.bin_edges_ns
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTOGRAM_HEADER)
        for edge, count in zip(edges, histogram.counts):
            writer.writerow(["%.4f" % edge, int(count)])


def read_histogram_csv(path: str | Path, window_period_ns: float) -> CoincidenceHistogram:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HISTOGRAM_HEADER:
            raise ConfigError(f"bad histogram header: {header}")
        edges, counts = [], []
        for rec in reader:
            if not rec:
                continue
            edges.append(float(rec[0]))
            counts.append(int(rec[1]))
    if len(edges) < 2:
        raise ConfigError("histogram CSV must contain at least two bins")
    bin_width = edges[1] - edges[0]
    bins_per_window = int(round(window_period_ns // bin_width))
    n_windows = (len(counts) // bins_per_window - 1) // 2
    return CoincidenceHistogram(bin_width, np.array(counts, dtype=np.int64),
                                window_period_ns, n_windows)


# ---------------------------------------------------------------------------
# config files


_INT_FIELDS = {"rng_seed"}


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` file; '#' starts a comment; blank lines ignored."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in mapping:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    """Build an ExperimentConfig from flat key-value strings.

    Keys mirror the dataclass field names exactly; unknown keys are hard
    errors, missing keys take the calibrated defaults.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        try:
            kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError:
            raise ConfigError(f"config key {key!r} has non-numeric value {value!r}") from None
    return ExperimentConfig(**kwargs)


def config_to_text(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {v:d}" if f.name in _INT_FIELDS else f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"
