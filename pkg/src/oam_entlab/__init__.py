"""Simulation and analysis toolkit for an OAM atom-photon entanglement run.

The package models Laguerre-Gaussian mode analyzers (fork hologram plus
single-mode fiber), generates statistically faithful coincidence data from a
two-qubit source state, and runs the full analysis chain: maximum-likelihood
tomography, the p + q - 1 fidelity lower bound, entanglement of formation,
purity, and the best-fit pure state.  The `oam_entlab.cli` module exposes the
same pipeline as the `oam-entlab` command; `oam_entlab.plots` renders the
report figures.
"""

from .quantum_core import (
    StateError,
    BASIS_LABELS,
    MeasBasisState,
    PureTwoQubit,
    TwoQubitState,
    SourceSpectrum,
    QuditPairState,
    psi_gamma,
    born_probability,
    product_projector,
    truncated_source_state,
    purity,
    fidelity_to_pure,
)
from .lg_modes import (
    GridError,
    AnalyzerError,
    LGMode,
    PolarGrid,
    TransverseField,
    AnalyzerSetting,
    AnalyzerState,
    VORTEX_EMISSION_WAIST_RATIO,
    polar_grid,
    default_grid,
    evaluate_mode,
    overlap,
    analyzer_state,
    balanced_displacement,
    distinction_ratio,
    radial_congruence,
    orthogonal_setting,
    radial_mismatch_penalty,
)
from .experiment_sim import (
    ConfigError,
    SimulationError,
    ExperimentConfig,
    CoincidenceRow,
    CoincidenceTable,
    CoincidenceHistogram,
    G2Estimate,
    effective_state,
    coincidence_probability,
    simulate_counts,
    simulate_histogram,
    g2_estimate,
    analyzer_for_label,
    write_table_csv,
    read_table_csv,
    write_histogram_csv,
    read_histogram_csv,
    parse_kv_file,
    config_from_mapping,
    config_to_text,
)
from .tomography import (
    TomographyError,
    CANONICAL_SETTINGS,
    TomographyDataset,
    ReconstructionResult,
    dataset_from_table,
    poisson_dataset,
    predicted_probabilities,
    linear_inversion,
    mle_reconstruct,
    save_reconstruction,
    load_reconstruction,
)
from .entanglement_metrics import (
    MetricsError,
    WitnessInput,
    WitnessBound,
    MetricReport,
    fidelity_lower_bound,
    concurrence,
    entanglement_of_formation,
    best_pure_fit,
    bootstrap_errors,
    full_report,
    save_report,
    load_report,
)

__version__ = "0.1.0"
