import math
from dataclasses import replace

import numpy as np
import pytest

from oam_entlab.experiment_sim import (
    CoincidenceRow,
    CoincidenceTable,
    ExperimentConfig,
    simulate_counts,
)
from oam_entlab.quantum_core import TwoQubitState, born_probability, psi_gamma
from oam_entlab.entanglement_metrics import entanglement_of_formation
from oam_entlab.tomography import (
    CANONICAL_SETTINGS,
    ReconstructionResult,
    TomographyDataset,
    TomographyError,
    dataset_from_table,
    linear_inversion,
    load_reconstruction,
    mle_reconstruct,
    poisson_dataset,
    predicted_probabilities,
    save_reconstruction,
)

GAMMA0 = 0.74 * complex(math.cos(0.11 * math.pi), math.sin(0.11 * math.pi))
SWAP = np.eye(4)[[0, 2, 1, 3]]


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def exact_dataset(rho: TwoQubitState, exposure: float = 1e6,
                  settings=CANONICAL_SETTINGS) -> TomographyDataset:
    probs = np.array(predicted_probabilities(rho, settings))
    return TomographyDataset(tuple(settings), exposure * probs,
                             np.full(len(settings), exposure))


def random_density_matrix(rng: np.random.Generator) -> TwoQubitState:
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return TwoQubitState(rho / np.trace(rho).real)


# ---------------------------------------------------------------------------
# forward map


def test_predicted_probabilities_examples():
    bell = psi_gamma(1.0).density_matrix()
    assert abs(predicted_probabilities(bell, [("zero", "zero")])[0] - 0.5) < 1e-12
    iso = TwoQubitState(np.eye(4) / 4.0)
    for pair in CANONICAL_SETTINGS:
        assert abs(predicted_probabilities(iso, [pair])[0] - 0.25) < 1e-12
    psi = psi_gamma(GAMMA0).density_matrix()
    want = abs(1.0 + GAMMA0) ** 2 / (4.0 * (1.0 + abs(GAMMA0) ** 2))
    assert abs(predicted_probabilities(psi, [("plus", "plus")])[0] - want) < 1e-12


def test_predicted_probabilities_match_born():
    rng = np.random.default_rng(11)
    for _ in range(10):
        rho = random_density_matrix(rng)
        probs = predicted_probabilities(rho, CANONICAL_SETTINGS)
        for (a, b), p in zip(CANONICAL_SETTINGS, probs):
            from oam_entlab.quantum_core import MeasBasisState
            direct = born_probability(rho, MeasBasisState.from_label(a),
                                      MeasBasisState.from_label(b))
            assert abs(p - direct) < 1e-12


# ---------------------------------------------------------------------------
# dataset construction


def test_dataset_requires_sixteen_settings():
    with pytest.raises(TomographyError):
        TomographyDataset((("zero", "zero"),) * 8, np.ones(8), np.ones(8))


def test_dataset_rejects_degenerate_settings():
    settings = (("zero", "zero"),) * 16
    with pytest.raises(TomographyError):
        TomographyDataset(settings, np.ones(16), np.ones(16))


def test_gram_condition_finite_for_canonical():
    ds = exact_dataset(TwoQubitState(np.eye(4) / 4.0))
    assert ds.gram_condition() < 1e3


def test_dataset_from_table_subtraction():
    rows = (
        CoincidenceRow("zero", "zero", 100, 1000, 2000, 10.0),
        CoincidenceRow("zero", "one", 500, 1000, 2000, 10.0),
    )
    table = CoincidenceTable(rows)
    settings = [(r.setting_as, r.setting_s) for r in rows]
    # repetition 1000/s -> exposure 1e4 trials; floor = 1000*2000/1e4 = 200
    base = [(r.coincidences, 200.0) for r in rows]
    padded_rows = list(rows)
    labels = ("zero", "one", "plus", "u")
    for a in labels:
        for b in labels:
            if (a, b) not in settings:
                padded_rows.append(CoincidenceRow(a, b, 300, 1000, 2000, 10.0))
    table = CoincidenceTable(tuple(padded_rows))
    ds = dataset_from_table(table, 1000.0)
    assert ds.counts[0] == 0.0                       # clipped at zero
    assert abs(ds.counts[1] - 300.0) < 1e-9          # 500 - 200
    assert np.all(ds.exposures == 1e4)
    raw = dataset_from_table(table, 1000.0, subtract_accidentals=False)
    assert raw.counts[0] == 100.0 and raw.counts[1] == 500.0


def test_dataset_from_table_drift_factors():
    cfg = replace(ExperimentConfig(), acquisition_time=50.0)
    table = simulate_counts(psi_gamma(GAMMA0), CANONICAL_SETTINGS, cfg)
    drift = np.linspace(0.8, 1.2, 16)
    ds = dataset_from_table(table, cfg.repetition_rate, drift_factors=drift)
    base = dataset_from_table(table, cfg.repetition_rate)
    scale = drift / drift.mean()
    assert np.allclose(ds.exposures, base.exposures * scale)
    with pytest.raises(TomographyError):
        dataset_from_table(table, cfg.repetition_rate, drift_factors=drift[:4])


def test_poisson_dataset_deterministic():
    rho = psi_gamma(GAMMA0).density_matrix()
    d1 = poisson_dataset(rho, 1e4, np.random.default_rng(7))
    d2 = poisson_dataset(rho, 1e4, np.random.default_rng(7))
    assert np.array_equal(d1.counts, d2.counts)


# ---------------------------------------------------------------------------
# linear inversion


def lstsq_oracle(dataset: TomographyDataset) -> np.ndarray:
    """Independent reconstruction: solve for the 16 real Hermitian degrees of
    freedom entry by entry rather than in a Pauli basis."""
    proj = dataset.projectors()
    n = len(dataset.settings)
    a = np.zeros((n, 16))
    for k in range(n):
        p = proj[k]
        col = 0
        for i in range(4):
            a[k, col] = p[i, i].real
            col += 1
        for i in range(4):
            for j in range(i + 1, 4):
                a[k, col] = 2.0 * p[j, i].real
                a[k, col + 1] = -2.0 * p[j, i].imag
                col += 2
    freq = dataset.counts / dataset.exposures
    x, *_ = np.linalg.lstsq(a, freq, rcond=None)
    rho = np.zeros((4, 4), dtype=complex)
    col = 0
    for i in range(4):
        rho[i, i] = x[col]
        col += 1
    for i in range(4):
        for j in range(i + 1, 4):
            rho[i, j] = x[col] + 1j * x[col + 1]
            rho[j, i] = x[col] - 1j * x[col + 1]
            col += 2
    return rho / np.trace(rho).real


@pytest.mark.parametrize("state", [
    TwoQubitState(np.eye(4) / 4.0),
    psi_gamma(1.0).density_matrix(),
    psi_gamma(GAMMA0).density_matrix(),
])
def test_linear_inversion_noiseless(state):
    ds = exact_dataset(state)
    rho = linear_inversion(ds)
    assert np.max(np.abs(rho - state.matrix)) < 1e-10
    assert np.max(np.abs(rho - lstsq_oracle(ds))) < 1e-8


def test_linear_inversion_unit_trace_hermitian_on_noise():
    rng = np.random.default_rng(2)
    ds = poisson_dataset(psi_gamma(GAMMA0).density_matrix(), 500.0, rng)
    rho = linear_inversion(ds)
    assert abs(np.trace(rho).real - 1.0) < 1e-12
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-12


# ---------------------------------------------------------------------------
# maximum likelihood


def test_mle_bell_closed_loop():
    truth = psi_gamma(1.0).density_matrix()
    ds = poisson_dataset(truth, 1e6, np.random.default_rng(0))
    rec = mle_reconstruct(ds)
    assert rec.converged
    assert trace_distance(rec.rho.matrix, truth.matrix) < 5e-3


def test_mle_uniform_counts_give_identity():
    ds = TomographyDataset(CANONICAL_SETTINGS,
                           np.full(16, 2.5e5), np.full(16, 1e6))
    rec = mle_reconstruct(ds)
    assert trace_distance(rec.rho.matrix, np.eye(4) / 4.0) < 1e-2


def test_mle_matches_linear_inversion_on_exact_data():
    for state in (psi_gamma(GAMMA0).density_matrix(),
                  TwoQubitState(0.8 * psi_gamma(1.0).density_matrix().matrix
                                + 0.2 * np.eye(4) / 4.0)):
        ds = exact_dataset(state)
        rec = mle_reconstruct(ds)
        assert trace_distance(rec.rho.matrix, linear_inversion(ds)) < 1e-6


def test_mle_psd_by_construction():
    rng = np.random.default_rng(4)
    for _ in range(8):
        truth = random_density_matrix(rng)
        ds = poisson_dataset(truth, 300.0, rng)
        rec = mle_reconstruct(ds)
        assert np.linalg.eigvalsh(rec.rho.matrix).min() >= -1e-12
        assert abs(np.trace(rec.rho.matrix) - 1.0) < 1e-12


def test_mle_likelihood_history_monotone():
    rng = np.random.default_rng(6)
    ds = poisson_dataset(psi_gamma(GAMMA0).density_matrix(), 2000.0, rng)
    rec = mle_reconstruct(ds)
    hist = rec.ll_history
    assert len(hist) >= 2
    for a, b in zip(hist, hist[1:]):
        assert b >= a - 1e-9 * max(1.0, abs(a))


def test_mle_statistical_consistency():
    truth = psi_gamma(GAMMA0).density_matrix()
    tds = {1e4: [], 1e5: []}
    for seed in range(200):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
        for n in tds:
            rec = mle_reconstruct(poisson_dataset(truth, n, rng))
            tds[n].append(trace_distance(rec.rho.matrix, truth.matrix))
    assert np.mean(tds[1e4]) / np.mean(tds[1e5]) >= 2.0


def test_mle_swap_equivariance():
    rng = np.random.default_rng(9)
    truth = random_density_matrix(rng)
    probs = np.array(predicted_probabilities(truth, CANONICAL_SETTINGS))
    counts = np.random.default_rng(1).poisson(1e5 * probs).astype(float)
    exposures = np.full(16, 1e5)
    ds = TomographyDataset(CANONICAL_SETTINGS, counts, exposures)
    swapped = tuple((b, a) for a, b in CANONICAL_SETTINGS)
    ds_swapped = TomographyDataset(swapped, counts, exposures)
    r1 = mle_reconstruct(ds).rho.matrix
    r2 = mle_reconstruct(ds_swapped).rho.matrix
    assert np.max(np.abs(r2 - SWAP @ r1 @ SWAP)) < 1e-8


def test_mle_iteration_cap():
    rng = np.random.default_rng(12)
    ds = poisson_dataset(psi_gamma(GAMMA0).density_matrix(), 1e4, rng)
    rec = mle_reconstruct(ds, max_iter=1)
    assert not rec.converged


def test_mle_rejects_bad_input():
    with pytest.raises(TomographyError):
        mle_reconstruct(TomographyDataset(CANONICAL_SETTINGS, np.zeros(16),
                                          np.full(16, 100.0)))
    ds = exact_dataset(psi_gamma(1.0).density_matrix())
    with pytest.raises(TomographyError):
        mle_reconstruct(ds, tol=0.0)


def test_mle_bench_eof_in_reported_band():
    cfg = ExperimentConfig()
    table = simulate_counts(psi_gamma(GAMMA0), CANONICAL_SETTINGS, cfg)
    rec = mle_reconstruct(dataset_from_table(table, cfg.repetition_rate))
    eof = entanglement_of_formation(rec.rho)
    assert 0.59 <= eof <= 0.93


# ---------------------------------------------------------------------------
# serialization


def test_reconstruction_round_trip(tmp_path):
    ds = poisson_dataset(psi_gamma(GAMMA0).density_matrix(), 1e4,
                         np.random.default_rng(3))
    rec = mle_reconstruct(ds)
    path = tmp_path / "rec.json"
    save_reconstruction(rec, path)
    back = load_reconstruction(path)
    assert isinstance(back, ReconstructionResult)
    assert np.max(np.abs(back.rho.matrix - rec.rho.matrix)) < 1e-15
    assert back.log_likelihood == rec.log_likelihood
    assert back.iterations == rec.iterations
    assert back.converged == rec.converged


def test_load_reconstruction_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"matrix": "nope"}')
    with pytest.raises(TomographyError):
        load_reconstruction(path)
