import numpy as np
import pytest

from gbsg import errors
from gbsg.featsel import (
    AgeModel,
    ElasticNetParams,
    FeatureMatrix,
    apply_age_correction,
    elastic_net_fit,
    enet_kkt_residual,
    fit_age_correction,
    load_selection,
    save_selection,
    select_features,
    zscore_apply,
    zscore_fit,
)

import oracles


# --- age correction -----------------------------------------------------------

def test_age_slope_zero_for_age_independent_feature():
    rng = np.random.default_rng(0)
    ages = rng.uniform(60, 90, 200)
    x = np.column_stack([rng.normal(5.0, 0.01, 200)])
    m = fit_age_correction(x, ages)
    assert abs(m.slope[0]) < 0.01
    corrected = apply_age_correction(x, ages, m)
    assert np.allclose(corrected, x, atol=0.05)


def test_age_exact_linear_feature():
    ages = np.array([60.0, 70.0, 80.0, 90.0])
    x = (2.0 * ages)[:, None]
    m = fit_age_correction(x, ages)
    assert m.slope[0] == pytest.approx(2.0, abs=1e-12)
    corrected = apply_age_correction(x, ages, m)
    assert np.allclose(corrected, m.cn_mean[0])


def test_age_matches_normal_equations():
    rng = np.random.default_rng(1)
    ages = rng.uniform(55, 95, 50)
    x = np.column_stack([
        1.5 * ages + rng.normal(0, 2, 50),
        -0.3 * ages + 10 + rng.normal(0, 1, 50),
    ])
    m = fit_age_correction(x, ages)
    for j in range(2):
        b0, b1 = oracles.ols_line(ages, x[:, j])
        assert m.intercept[j] == pytest.approx(b0, abs=1e-9)
        assert m.slope[j] == pytest.approx(b1, abs=1e-9)


def test_age_correction_idempotent():
    rng = np.random.default_rng(2)
    ages = rng.uniform(55, 95, 80)
    x = np.column_stack([0.8 * ages + rng.normal(0, 1, 80)])
    m = fit_age_correction(x, ages)
    once = apply_age_correction(x, ages, m)
    m2 = fit_age_correction(once, ages)
    twice = apply_age_correction(once, ages, m2)
    assert np.allclose(once, twice, atol=1e-9)


def test_age_cn_subject_at_mean_age_and_prediction():
    ages = np.array([60.0, 70, 80])
    x = (3.0 * ages)[:, None]
    m = fit_age_correction(x, ages)
    pred = m.intercept[0] + m.slope[0] * 70.0
    out = apply_age_correction(np.array([[pred]]), [70.0], m)
    assert out[0, 0] == pytest.approx(m.cn_mean[0])


def test_age_errors():
    with pytest.raises(errors.TooFewSubjects):
        fit_age_correction(np.zeros((2, 1)), [70, 71])
    with pytest.raises(errors.ConstantAges):
        fit_age_correction(np.zeros((5, 1)), [70] * 5)


# --- z-score -------------------------------------------------------------------

def test_zscore_basic_column():
    m = zscore_fit(np.array([[1.0], [2.0], [3.0]]))
    assert m.mean[0] == 2.0 and m.sd[0] == pytest.approx(1.0)
    out = zscore_apply(np.array([[1.0], [2.0], [3.0]]), m)
    assert np.allclose(out.ravel(), [-1, 0, 1])


def test_zscore_constant_column_maps_to_zero():
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    m = zscore_fit(x)
    assert m.constant[0] and not m.constant[1]
    out = zscore_apply(x, m)
    assert np.all(out[:, 0] == 0.0)


def test_zscore_train_columns_standardized():
    rng = np.random.default_rng(3)
    x = rng.normal(3, 2, size=(40, 5))
    out = zscore_apply(x, zscore_fit(x))
    assert np.allclose(out.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(out.std(axis=0, ddof=1), 1, atol=1e-9)


def test_zscore_too_few_rows():
    with pytest.raises(errors.TooFewSubjects):
        zscore_fit(np.zeros((1, 3)))


# --- elastic net ------------------------------------------------------------------

def _orthonormal_design(rng, n, p):
    q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    return q  # columns with unit norm, X^T X = I


def test_enet_ols_on_orthonormal_design():
    rng = np.random.default_rng(4)
    x = _orthonormal_design(rng, 24, 6)
    y = rng.choice([-1.0, 1.0], 24)
    res = elastic_net_fit(x, y, ElasticNetParams(lambda1=0.0, lambda2=0.0,
                                                 tolerance=1e-12, max_iterations=500))
    assert np.allclose(res.coefficients, x.T @ y, atol=1e-8)


def test_enet_kill_condition_all_zero():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 8))
    y = rng.choice([-1.0, 1.0], 30)
    lam_max = float(np.max(np.abs(x.T @ y)) / 30)
    with pytest.raises(errors.NoFeatureSelected):
        elastic_net_fit(x, y, ElasticNetParams(lambda1=lam_max * 1.001))


def test_enet_orthonormal_closed_form():
    # scaled orthonormal design: X^T X = n I, where the coordinate update
    # has the closed form soft(x_j.y/n, lam1) / (1 + lam2)
    rng = np.random.default_rng(6)
    n, p = 36, 5
    x = _orthonormal_design(rng, n, p) * np.sqrt(n)
    y = rng.choice([-1.0, 1.0], n)
    for lam1, lam2 in [(0.01, 0.5), (0.05, 1.0), (0.0, 2.0), (0.02, 0.0)]:
        res = elastic_net_fit(x, y, ElasticNetParams(lambda1=lam1, lambda2=lam2,
                                                     tolerance=1e-13, max_iterations=2000))
        want = oracles.enet_orthonormal_beta(x, y, lam1, lam2)
        assert np.allclose(res.coefficients, want, atol=1e-8)


def test_enet_kkt_residual_random_problems():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(10, 51))
        p = int(rng.integers(2, 101))
        x = rng.normal(size=(n, p))
        beta_true = np.zeros(p)
        beta_true[: max(1, p // 10)] = rng.normal(size=max(1, p // 10))
        y = np.sign(x @ beta_true + 0.1 * rng.normal(size=n))
        y[y == 0] = 1.0
        lam1 = float(rng.uniform(0.005, 0.1))
        lam2 = float(rng.uniform(0.0, 1.0))
        try:
            res = elastic_net_fit(x, y, ElasticNetParams(lambda1=lam1, lambda2=lam2,
                                                         tolerance=1e-10,
                                                         max_iterations=5000))
        except errors.NoFeatureSelected:
            continue
        assert res.converged
        assert enet_kkt_residual(x, y, res.coefficients, lam1, lam2) <= 1e-6


def test_enet_objective_monotone_per_sweep():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 30))
    y = rng.choice([-1.0, 1.0], 40)
    res = elastic_net_fit(x, y, ElasticNetParams(lambda1=0.02, lambda2=0.3),
                          collect_objective=True)
    h = res.objective_history
    assert len(h) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_enet_target_mode_hits_window():
    rng = np.random.default_rng(9)
    n, p = 60, 120
    x = rng.normal(size=(n, p))
    y = rng.choice([-1.0, 1.0], n)
    res = elastic_net_fit(x, y, ElasticNetParams(lambda1=None, target_nonzeros=30))
    assert 27 <= res.n_selected <= 33


def test_enet_target_capped_at_feature_count():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(30, 8))
    y = rng.choice([-1.0, 1.0], 30)
    res = elastic_net_fit(x, y, ElasticNetParams(lambda1=None, target_nonzeros=50))
    assert 1 <= res.n_selected <= 8


# --- select_features ---------------------------------------------------------------

def _fm(n=4, p=4):
    rng = np.random.default_rng(11)
    return FeatureMatrix(
        subject_ids=[f"s{i}" for i in range(n)],
        col_names=[f"V:{j}" for j in range(p)],
        values=rng.normal(size=(n, p)),
    )


def _mask(selected, p=4):
    from gbsg.featsel import SelectionMask

    sel = np.zeros(p, bool)
    sel[list(selected)] = True
    coefs = np.where(sel, 0.5, 0.0)
    return SelectionMask(selected=sel, coefficients=coefs, lambda1=0.1, lambda2=1.0,
                         iterations=3, converged=True, objective=0.0)


def test_select_all_true_identity():
    fm = _fm()
    out = select_features(fm, _mask([0, 1, 2, 3]))
    assert out.col_names == fm.col_names
    assert np.array_equal(out.values, fm.values)


def test_select_subset_preserves_names():
    fm = _fm()
    out = select_features(fm, _mask([1, 3]))
    assert out.col_names == ["V:1", "V:3"]
    assert np.array_equal(out.values, fm.values[:, [1, 3]])


def test_select_empty_mask():
    with pytest.raises(errors.EmptyMask):
        select_features(_fm(), _mask([]))


def test_selection_roundtrip_through_report_file(tmp_path):
    fm = _fm()
    mask = _mask([0, 2])
    p = tmp_path / "sel.txt"
    save_selection(mask, fm.col_names, p)
    got = load_selection(p)
    assert [n for n, _ in got] == ["V:0", "V:2"]
    assert all(c == 0.5 for _, c in got)


def test_feature_matrix_csv_roundtrip(tmp_path):
    fm = _fm()
    p = tmp_path / "fm.csv"
    fm.save_csv(p)
    back = FeatureMatrix.load_csv(p)
    assert back.subject_ids == fm.subject_ids
    assert back.col_names == fm.col_names
    assert np.allclose(back.values, fm.values)


def test_age_then_zscore_training_rows_standardized():
    rng = np.random.default_rng(12)
    ages = rng.uniform(55, 95, 50)
    x = rng.normal(size=(50, 6)) + np.outer(ages, rng.normal(size=6) * 0.05)
    m = fit_age_correction(x, ages)
    corrected = apply_age_correction(x, ages, m)
    z = zscore_apply(corrected, zscore_fit(corrected))
    assert np.allclose(z.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(z.std(axis=0, ddof=1), 1, atol=1e-9)
