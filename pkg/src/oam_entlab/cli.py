"""Command-line pipeline: analyzer tables, simulated runs, reconstruction,
entanglement metrics, and the end-to-end report bundle.

Every run is driven by one flat key = value config file plus a single seed;
all random streams derive from (seed, stream, row) so identical (config,
seed) pairs give byte-identical data files.  The only timestamp lives in the
run manifest echo.  Exit codes: 0 success, 2 config/input parsing, 3 physics
domain (grid, leakage, states), 4 simulation, 5 tomography, 6 metrics.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .entanglement_metrics import (
    MetricsError,
    WitnessInput,
    full_report,
    save_report,
)
from .experiment_sim import (
    ConfigError,
    ExperimentConfig,
    SimulationError,
    analyzer_for_label,
    config_from_mapping,
    config_to_text,
    g2_estimate,
    parse_kv_file,
    read_table_csv,
    simulate_counts,
    simulate_histogram,
    write_histogram_csv,
    write_table_csv,
)
from .lg_modes import (
    AnalyzerError,
    AnalyzerSetting,
    AnalyzerState,
    GridError,
    LGMode,
    VORTEX_EMISSION_WAIST_RATIO,
    analyzer_state,
    default_grid,
    distinction_ratio,
    evaluate_mode,
    overlap,
    radial_congruence,
)
from .plots import (
    save_coincidence_figure,
    save_density_matrix_figure,
    save_histogram_figure,
)
from .quantum_core import StateError, psi_gamma
from .tomography import (
    CANONICAL_SETTINGS,
    TomographyError,
    dataset_from_table,
    mle_reconstruct,
    save_reconstruction,
)

__all__ = [
    "RunManifest",
    "FORMAT_VERSION",
    "SOURCE_GAMMA",
    "WITNESS_SETTINGS",
    "build_parser",
    "main",
    "thread_count",
    "builtin_config_path",
    "write_manifest",
    "load_manifest",
    "load_modes_json",
    "cmd_modes",
    "cmd_simulate",
    "cmd_tomo",
    "cmd_metrics",
    "cmd_report",
]

FORMAT_VERSION = "1.0"
COMMANDS = ("modes", "simulate", "tomo", "metrics", "report")

# Source state |00> + gamma|11> driving the simulated runs: the best-fit
# amplitude ratio of the modeled pair source.
SOURCE_GAMMA = 0.74 * complex(math.cos(0.11 * math.pi), math.sin(0.11 * math.pi))

# Collection fiber-matched Gaussian waist, micrometers.
FIBER_WAIST_UM = 140.0

# Witness runs take full 2x2 coincidence grids in the two superposition bases.
WITNESS_SETTINGS = tuple((a, b) for a in ("plus", "minus") for b in ("plus", "minus")) + \
    tuple((a, b) for a in ("u", "d") for b in ("u", "d"))

TOMOGRAPHY_STREAM = 0
WITNESS_STREAM = 1
HISTOGRAM_STREAM = 2

MANIFEST_FILE = "run_manifest.json"
CONFIG_ECHO_FILE = "config_used.cfg"

_EXIT_CONFIG = 2
_EXIT_PHYSICS = 3
_EXIT_SIMULATE = 4
_EXIT_TOMO = 5
_EXIT_METRICS = 6


@dataclass(frozen=True)
class RunManifest:
    """Identity of one run: command, config source, output dir, seed."""

    command: str
    config_path: str
    output_dir: str
    seed: int
    format_version: str = FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    """Echo the manifest as JSON; the timestamp lives only here."""
    payload = {
        "command": manifest.command,
        "config_path": manifest.config_path,
        "output_dir": manifest.output_dir,
        "seed": manifest.seed,
        "format_version": manifest.format_version,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> RunManifest:
    payload = json.loads(Path(path).read_text())
    try:
        return RunManifest(
            command=str(payload["command"]),
            config_path=str(payload["config_path"]),
            output_dir=str(payload["output_dir"]),
            seed=int(payload["seed"]),
            format_version=str(payload["format_version"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad run manifest {path}: {exc}") from None


def thread_count() -> int:
    """Parallelism cap from OAM_ENTLAB_THREADS: unset -> 1, 0 -> one per CPU."""
    raw = os.environ.get("OAM_ENTLAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"OAM_ENTLAB_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("OAM_ENTLAB_THREADS must be >= 0")
    return (os.cpu_count() or 1) if n == 0 else n


def builtin_config_path() -> Path:
    return Path(str(resources.files("oam_entlab") / "data" / "paper_defaults.cfg"))


def _config_for(manifest: RunManifest, config: ExperimentConfig | None) -> ExperimentConfig:
    """Resolve the effective config: load from the manifest when not given,
    then force the manifest seed so all streams derive from it."""
    if config is None:
        path = Path(manifest.config_path)
        try:
            config = config_from_mapping(parse_kv_file(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if config.rng_seed != manifest.seed:
        config = replace(config, rng_seed=manifest.seed)
    return config


def _prepare(manifest: RunManifest, config: ExperimentConfig) -> Path:
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, out / MANIFEST_FILE)
    (out / CONFIG_ECHO_FILE).write_text(config_to_text(config))
    return out


def _cplx(z: complex) -> dict[str, float]:
    return {"re": float(z.real), "im": float(z.imag)}


# ---------------------------------------------------------------------------
# modes


def cmd_modes(manifest: RunManifest, config: ExperimentConfig | None = None) -> None:
    """Write analyzer-state tables, a displacement sweep, and the coupling
    matrix of the OAM channels into the analyzer fiber mode (modes.json)."""
    config = _config_for(manifest, config)
    out = _prepare(manifest, config)

    analyzers = []
    for label in ("zero", "one", "plus", "minus", "u", "d"):
        setting = analyzer_for_label(label, FIBER_WAIST_UM)
        st = analyzer_state(setting)
        analyzers.append({
            "label": label,
            "hologram_charge": setting.hologram_charge,
            "displacement": setting.displacement,
            "fiber_waist": setting.fiber_waist,
            "orientation": setting.orientation,
            "diffraction_order": setting.diffraction_order,
            "alpha": _cplx(st.alpha),
            "beta": _cplx(st.beta),
            "leakage": float(st.leakage),
            "radial_congruence": float(radial_congruence(setting)),
        })

    sweep = []
    for d in np.arange(0.0, 5.0 + 1e-9, 0.25):
        st = analyzer_state(AnalyzerSetting(1, float(d), FIBER_WAIST_UM))
        sweep.append({
            "displacement": float(d),
            "alpha_sq": float(abs(st.alpha) ** 2),
            "beta_sq": float(abs(st.beta) ** 2),
            "leakage": float(st.leakage),
        })

    # LG-basis overlap of the emitted channels against the fiber-waist modes:
    # off-diagonal entries vanish by angular orthogonality, the vortex
    # diagonal shows the bare two-waist radial mismatch (before any fork
    # correction, which the per-analyzer radial_congruence column carries)
    grid = default_grid(FIBER_WAIST_UM)
    fiber_modes = [evaluate_mode(LGMode(0, m, FIBER_WAIST_UM), grid) for m in (0, 1)]
    emitted = [
        evaluate_mode(LGMode(0, 0, FIBER_WAIST_UM), grid),
        evaluate_mode(LGMode(0, 1, FIBER_WAIST_UM * VORTEX_EMISSION_WAIST_RATIO), grid),
    ]
    lg_overlap = [[float(abs(overlap(f, e)) ** 2) for e in emitted] for f in fiber_modes]

    payload = {
        "fiber_waist": FIBER_WAIST_UM,
        "analyzers": analyzers,
        "displacement_sweep": sweep,
        "distinction_ratio": float(distinction_ratio(analyzer_for_label("one", FIBER_WAIST_UM))),
        "lg_basis_overlap": {
            "fiber_modes": ["LG00", "LG01"],
            "emission_waists": [FIBER_WAIST_UM, FIBER_WAIST_UM * VORTEX_EMISSION_WAIST_RATIO],
            "matrix": lg_overlap,
        },
    }
    (out / "modes.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_modes_json(path: str | Path):
    """Re-parse modes.json into (payload, [(label, AnalyzerSetting, AnalyzerState)])."""
    payload = json.loads(Path(path).read_text())
    entries = []
    try:
        for row in payload["analyzers"]:
            setting = AnalyzerSetting(
                int(row["hologram_charge"]), float(row["displacement"]),
                float(row["fiber_waist"]), float(row["orientation"]),
                int(row["diffraction_order"]))
            state = AnalyzerState(
                complex(row["alpha"]["re"], row["alpha"]["im"]),
                complex(row["beta"]["re"], row["beta"]["im"]),
                float(row["leakage"]))
            entries.append((str(row["label"]), setting, state))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad modes table {path}: {exc}") from None
    return payload, entries


# ---------------------------------------------------------------------------
# simulate / tomo / metrics stages


def _simulate_stage(config: ExperimentConfig, out: Path):
    source = psi_gamma(SOURCE_GAMMA)
    table = simulate_counts(source, CANONICAL_SETTINGS, config, stream=TOMOGRAPHY_STREAM)
    if sum(row.coincidences for row in table.rows) == 0:
        raise SimulationError("run produced no coincidences; increase acquisition_time")
    witness_table = simulate_counts(source, WITNESS_SETTINGS, config, stream=WITNESS_STREAM)
    histogram = simulate_histogram(source, config, config.acquisition_time,
                                   stream=HISTOGRAM_STREAM)
    write_table_csv(table, out / "tomography_counts.csv")
    write_table_csv(witness_table, out / "witness_counts.csv")
    write_histogram_csv(histogram, out / "histogram.csv")
    return table, witness_table, histogram


def cmd_simulate(manifest: RunManifest, config: ExperimentConfig | None = None) -> None:
    """Simulate the tomography and witness coincidence tables plus the
    delay histogram, writing the three CSV files."""
    config = _config_for(manifest, config)
    out = _prepare(manifest, config)
    _simulate_stage(config, out)


def cmd_tomo(manifest: RunManifest, config: ExperimentConfig | None = None,
             table_path: str | Path | None = None) -> None:
    """Reconstruct the density matrix from a coincidence table CSV."""
    config = _config_for(manifest, config)
    out = _prepare(manifest, config)
    table = read_table_csv(table_path or out / "tomography_counts.csv")
    dataset = dataset_from_table(table, config.repetition_rate)
    result = mle_reconstruct(dataset)
    save_reconstruction(result, out / "reconstruction.json")


def cmd_metrics(manifest: RunManifest, config: ExperimentConfig | None = None,
                table_path: str | Path | None = None,
                witness_path: str | Path | None = None,
                resamples: int = 200) -> None:
    """Full entanglement metrics (bound, EOF, purity, pure fit, bootstrap)
    from the tomography and witness coincidence tables."""
    config = _config_for(manifest, config)
    out = _prepare(manifest, config)
    table = read_table_csv(table_path or out / "tomography_counts.csv")
    witness_table = read_table_csv(witness_path or out / "witness_counts.csv")
    dataset = dataset_from_table(table, config.repetition_rate)
    witness = WitnessInput.from_table(witness_table)
    report = full_report(dataset, witness, config=config, n_resamples=resamples,
                         n_threads=thread_count())
    save_report(report, out / "metrics.json")


def _gamma_line(report) -> str:
    gamma = report.gamma_best
    if math.isfinite(gamma.real) and math.isfinite(gamma.imag):
        text = "gamma_best = %.4f * exp(%+.4fi rad)" % (abs(gamma),
                                                        math.atan2(gamma.imag, gamma.real))
    else:
        text = "gamma_best -> infinity (|11> limit)"
    return "%s  (fidelity %.4f, pure-fit EOF %.4f)" % (
        text, report.fidelity_at_gamma_best, report.eof_of_pure_fit)


def render_summary(config: ExperimentConfig, g2, result, report) -> str:
    verdict = "entangled" if report.fidelity_lower_bound > 0.5 else "not conclusive"
    lines = [
        "oam-entlab report",
        "=================",
        "",
        "trials: %.6g per second for %.6g s per setting" % (
            config.repetition_rate, config.acquisition_time),
        "rng seed: %d" % config.rng_seed,
        "",
        "g2(AS,S) at (zero, zero) = %.4g +- %.3g  (peak %d, off-peak mean %.4g)" % (
            g2.value, g2.stderr, g2.peak_total, g2.off_peak_mean),
        "fidelity lower bound (p+q-1) = %.4f +- %.4f  -> %s" % (
            report.fidelity_lower_bound, report.fidelity_lower_bound_stderr, verdict),
        "entanglement of formation = %.4f +- %.4f" % (report.eof, report.eof_stderr),
        "purity = %.4f +- %.4f" % (report.purity, report.purity_stderr),
        _gamma_line(report),
        "reconstruction: converged=%s, iterations=%d, log-likelihood=%.6g" % (
            result.converged, result.iterations, result.log_likelihood),
        "bootstrap: %d resamples, %d failures" % (
            report.bootstrap_resamples, report.bootstrap_failures),
        "",
    ]
    return "\n".join(lines)


def cmd_report(manifest: RunManifest, config: ExperimentConfig | None = None,
               resamples: int = 200) -> None:
    """End-to-end bundle: simulate, reconstruct, metrics, summary, figures."""
    config = _config_for(manifest, config)
    out = _prepare(manifest, config)

    table, witness_table, histogram = _simulate_stage(config, out)

    dataset = dataset_from_table(table, config.repetition_rate)
    result = mle_reconstruct(dataset)
    save_reconstruction(result, out / "reconstruction.json")

    witness = WitnessInput.from_table(witness_table)
    report = full_report(dataset, witness, config=config, n_resamples=resamples,
                         n_threads=thread_count())
    save_report(report, out / "metrics.json")

    g2 = g2_estimate(histogram)
    (out / "summary.txt").write_text(render_summary(config, g2, result, report))

    save_histogram_figure(histogram, out / "histogram.png")
    save_coincidence_figure(table, out / "coincidences.png")
    save_density_matrix_figure(result.rho, out / "density_matrix.png")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="flat key = value config file (default: bundled defaults)")
    common.add_argument("--out", metavar="DIR", default=".",
                        help="output directory, created if missing (default: .)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override the config rng_seed")
    common.add_argument("--resamples", type=int, default=200, metavar="N",
                        help="bootstrap resamples for metrics/report (default: 200)")
    common.add_argument("--acquisition", type=float, metavar="SECONDS",
                        help="override acquisition_time")

    parser = argparse.ArgumentParser(
        prog="oam-entlab",
        description="Simulate and analyze an OAM atom-photon entanglement run.",
        epilog="Environment: OAM_ENTLAB_THREADS caps bootstrap parallelism (0 = auto).")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("modes", parents=[common],
                   help="write analyzer-state and mode-coupling tables")
    sub.add_parser("simulate", parents=[common],
                   help="simulate coincidence tables and the delay histogram")
    p_tomo = sub.add_parser("tomo", parents=[common],
                            help="reconstruct the density matrix from a table CSV")
    p_tomo.add_argument("--table", metavar="PATH",
                        help="input coincidence CSV (default: OUT/tomography_counts.csv)")
    p_metrics = sub.add_parser("metrics", parents=[common],
                               help="entanglement metrics from coincidence tables")
    p_metrics.add_argument("--table", metavar="PATH",
                           help="tomography CSV (default: OUT/tomography_counts.csv)")
    p_metrics.add_argument("--witness-table", metavar="PATH",
                           help="witness CSV (default: OUT/witness_counts.csv)")
    sub.add_parser("report", parents=[common],
                   help="end-to-end run: simulate, reconstruct, metrics, figures")
    return parser


def _resolve_config(args) -> tuple[ExperimentConfig, str]:
    path = Path(args.config) if args.config else builtin_config_path()
    try:
        config = config_from_mapping(parse_kv_file(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if args.seed is not None:
        config = replace(config, rng_seed=args.seed)
    if args.acquisition is not None:
        config = replace(config, acquisition_time=args.acquisition)
    return config, str(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, config_path = _resolve_config(args)
        manifest = RunManifest(args.command, config_path, args.out, config.rng_seed)
        if args.command == "modes":
            cmd_modes(manifest, config)
        elif args.command == "simulate":
            cmd_simulate(manifest, config)
        elif args.command == "tomo":
            cmd_tomo(manifest, config, table_path=args.table)
        elif args.command == "metrics":
            cmd_metrics(manifest, config, table_path=args.table,
                        witness_path=args.witness_table, resamples=args.resamples)
        else:
            cmd_report(manifest, config, resamples=args.resamples)
    except ConfigError as exc:
        return _fail(_EXIT_CONFIG, exc)
    except (GridError, AnalyzerError, StateError) as exc:
        return _fail(_EXIT_PHYSICS, exc)
    except SimulationError as exc:
        return _fail(_EXIT_SIMULATE, exc)
    except TomographyError as exc:
        return _fail(_EXIT_TOMO, exc)
    except MetricsError as exc:
        return _fail(_EXIT_METRICS, exc)
    except OSError as exc:
        return _fail(_EXIT_CONFIG, exc)
    return 0


def _fail(code: int, exc: BaseException) -> int:
    print(f"oam-entlab: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
