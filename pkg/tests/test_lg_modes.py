import math

import numpy as np
import pytest

from oam_entlab.lg_modes import (
    AnalyzerError,
    AnalyzerSetting,
    GridError,
    LGMode,
    VORTEX_EMISSION_WAIST_RATIO,
    analyzer_state,
    balanced_displacement,
    default_grid,
    distinction_ratio,
    evaluate_mode,
    orthogonal_setting,
    overlap,
    polar_grid,
    radial_congruence,
    radial_mismatch_penalty,
)

W = 140.0
FORK = AnalyzerSetting(1, 0.0, W)
BLANK = AnalyzerSetting(0, 0.0, W)


# ---------------------------------------------------------------------------
# mode evaluation


def test_gaussian_peaks_on_axis():
    grid = default_grid(W)
    field = evaluate_mode(LGMode(0, 0, W), grid)
    intensity = np.abs(field.amplitudes[:, 0]) ** 2
    assert np.argmax(intensity) == 0  # innermost radial node


def test_vortex_vanishes_on_axis_and_winds():
    grid = default_grid(W)
    field = evaluate_mode(LGMode(0, 1, W), grid)
    intensity = np.abs(field.amplitudes) ** 2
    assert intensity[0].max() < intensity.max() * 1e-3
    for m in (-3, -2, -1, 1, 2, 3):
        f = evaluate_mode(LGMode(0, m, W), grid)
        ring = f.amplitudes[grid.n_radial // 3]
        phases = np.unwrap(np.angle(ring))
        wound = phases[-1] - phases[0] + (phases[1] - phases[0])
        assert abs(wound - 2.0 * math.pi * m) < 1e-3


def test_vortex_radial_peak_at_w_over_sqrt2():
    grid = default_grid(W)
    field = evaluate_mode(LGMode(0, 1, W), grid)
    intensity = np.abs(field.amplitudes[:, 0]) ** 2
    peak_r = grid.radial_nodes[np.argmax(intensity)]
    spacing = grid.r_max / grid.n_radial
    assert abs(peak_r - W / math.sqrt(2.0)) < spacing


def test_norms_are_one():
    grid = default_grid(W)
    for p in (0, 1, 2):
        for m in (-3, -1, 0, 2):
            field = evaluate_mode(LGMode(p, m, W), grid)
            assert abs(field.norm_squared() - 1.0) < 1e-9


def test_grid_rejections():
    grid = default_grid(W)
    with pytest.raises(GridError):
        evaluate_mode(LGMode(0, 0, 10.0), grid)      # spacing > waist/8
    with pytest.raises(GridError):
        evaluate_mode(LGMode(0, 0, 400.0), grid)     # radius < 6 waists
    with pytest.raises(GridError):
        polar_grid(6 * W, 32, 256)                   # below minimum nodes


# ---------------------------------------------------------------------------
# overlaps


def test_overlap_orthonormality():
    grid = default_grid(W)
    modes = {m: evaluate_mode(LGMode(0, m, W), grid) for m in range(-3, 4)}
    for m in modes:
        for mp in modes:
            val = overlap(modes[m], modes[mp])
            want = 1.0 if m == mp else 0.0
            assert abs(val - want) < 1e-6


def test_overlap_conjugate_symmetry():
    grid = default_grid(max(W, 200.0))
    a = evaluate_mode(LGMode(0, 1, W), grid)
    b = evaluate_mode(LGMode(1, 1, 200.0), grid)
    assert abs(overlap(a, b) - np.conj(overlap(b, a))) < 1e-14


def test_two_waist_overlap_against_analytic():
    w1, w2 = 140.0, 400.0
    grid = default_grid(w2)
    a = evaluate_mode(LGMode(0, 0, w1), grid)
    b = evaluate_mode(LGMode(0, 0, w2), grid)
    analytic = 2.0 * w1 * w2 / (w1 ** 2 + w2 ** 2)
    assert abs(overlap(a, b) - analytic) < 1e-6
    # independent doubled-resolution quadrature agrees
    fine = polar_grid(grid.r_max, 512, 512)
    af = evaluate_mode(LGMode(0, 0, w1), fine)
    bf = evaluate_mode(LGMode(0, 0, w2), fine)
    assert abs(overlap(af, bf) - overlap(a, b)) < 1e-6


def test_overlap_grid_mismatch():
    a = evaluate_mode(LGMode(0, 0, W), default_grid(W))
    b = evaluate_mode(LGMode(0, 0, W), polar_grid(6 * W, 128, 128))
    with pytest.raises(GridError):
        overlap(a, b)


def test_quadrature_convergence():
    # doubling resolution moves reported overlaps by < 1e-6
    for n in ((256, 512),):
        coarse = polar_grid(6 * W, n[0], n[0])
        fine = polar_grid(6 * W, n[1], n[1])
        for (p, m, w2) in ((0, 0, 90.0), (0, 1, 99.0), (1, 2, 120.0)):
            a1 = evaluate_mode(LGMode(0, m, W), coarse)
            b1 = evaluate_mode(LGMode(p, m, w2), coarse)
            a2 = evaluate_mode(LGMode(0, m, W), fine)
            b2 = evaluate_mode(LGMode(p, m, w2), fine)
            assert abs(overlap(a1, b1) - overlap(a2, b2)) < 1e-6


# ---------------------------------------------------------------------------
# analyzer model


def test_blank_hologram_is_zero_state():
    for d in (0.0, 0.3, 2.0):
        st = analyzer_state(AnalyzerSetting(0, d, W))
        assert st.alpha == 1.0 and st.beta == 0.0 and st.leakage == 0.0


def test_on_axis_fork_is_one_state():
    st = analyzer_state(FORK)
    assert abs(st.beta) ** 2 >= 0.999
    assert abs(st.alpha) ** 2 <= 1e-6
    # leakage of the fork-diffracted Gaussian outside {LG00, LG01}: 1 - pi/4
    assert abs(st.leakage - (1.0 - math.pi / 4.0)) < 1e-9


def test_distinction_ratio_large():
    assert distinction_ratio(FORK) >= 1000.0


def test_balanced_displacement_against_scan():
    d_star = balanced_displacement(W)
    assert abs(d_star - 0.6006319619125517) < 1e-9
    st = analyzer_state(AnalyzerSetting(1, d_star, W))
    assert abs(abs(st.alpha) - abs(st.beta)) < 1e-9
    # brute-force 1e-3 scan oracle
    ds = np.arange(0.5, 0.7, 1e-3)
    gaps = []
    for d in ds:
        s = analyzer_state(AnalyzerSetting(1, float(d), W))
        gaps.append(abs(abs(s.alpha) - abs(s.beta)))
    assert abs(ds[int(np.argmin(gaps))] - d_star) <= 1e-3


def test_orientation_sets_relative_phase():
    d = balanced_displacement(W)
    for theta in (0.0, math.pi / 2.0, -math.pi / 2.0, math.pi):
        st = analyzer_state(AnalyzerSetting(1, d, W, orientation=theta))
        assert abs(np.angle(st.beta / st.alpha) - math.atan2(math.sin(theta), math.cos(theta))) < 1e-12


def test_beta_monotone_and_limits():
    ds = np.linspace(0.0, 5.0, 100)
    betas = [abs(analyzer_state(AnalyzerSetting(1, float(d), W)).beta) ** 2 for d in ds]
    assert all(b1 >= b2 - 1e-12 for b1, b2 in zip(betas, betas[1:]))
    assert betas[0] >= 0.999
    # far-displaced fork passes the Gaussian; the residual vortex admixture
    # carries the 1/d tail of the off-axis phase kink (~0.354/d in amplitude)
    assert abs(analyzer_state(AnalyzerSetting(1, 5.0, W)).alpha) ** 2 >= 0.99
    assert abs(analyzer_state(AnalyzerSetting(1, 12.0, W)).alpha) ** 2 >= 0.999


def test_setting_validation():
    with pytest.raises(ValueError):
        AnalyzerSetting(2, 0.0, W)
    with pytest.raises(ValueError):
        AnalyzerSetting(1, -0.5, W)
    with pytest.raises(ValueError):
        AnalyzerSetting(1, 0.0, W, diffraction_order=2)
    with pytest.raises(AnalyzerError):
        distinction_ratio(BLANK)


def test_orthogonal_setting():
    assert orthogonal_setting(BLANK).hologram_charge == 1
    assert orthogonal_setting(FORK).hologram_charge == 0
    d = balanced_displacement(W)
    plus = AnalyzerSetting(1, d, W, orientation=0.0)
    minus = orthogonal_setting(plus)
    sa = analyzer_state(plus)
    sb = analyzer_state(minus)
    assert abs(np.vdot(sa.vector, sb.vector)) < 1e-9


# ---------------------------------------------------------------------------
# radial mismatch


def test_radial_congruence_values():
    assert radial_congruence(BLANK) == 1.0
    # fork-diffracted vortex channel against the w/sqrt(2) emission: 8 pi/27
    assert abs(radial_congruence(FORK) - 8.0 * math.pi / 27.0) < 1e-9
    assert abs(VORTEX_EMISSION_WAIST_RATIO - 1.0 / math.sqrt(2.0)) < 1e-15


def test_penalty_identical_profiles():
    assert radial_mismatch_penalty(BLANK, BLANK) == 0.0
    # both outcomes of a fork pair select the suppressed vortex channel
    want = 1.0 - (8.0 * math.pi / 27.0) ** 2
    assert abs(radial_mismatch_penalty(FORK, FORK) - want) < 1e-9


def test_penalty_balanced_pairs_negligible():
    d = balanced_displacement(W)
    plus = AnalyzerSetting(1, d, W)
    u = AnalyzerSetting(1, d, W, orientation=math.pi / 2.0)
    for pair in ((plus, plus), (plus, u), (u, u)):
        assert radial_mismatch_penalty(*pair) < 1e-2


def test_penalty_diagonal_pair_bounded():
    val = radial_mismatch_penalty(BLANK, FORK)
    assert val <= 0.10
    assert abs(val - (1.0 - 8.0 * math.pi / 27.0)) < 1e-9
