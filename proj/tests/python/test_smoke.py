import math

import numpy as np
import pytest

import lpbnn


def test_be_forward_matches_materialization():
    w_share = np.array([[2.0], [3.0]])
    u = [np.array([1.0, -1.0])]
    v = [np.array([2.0])]
    x = np.array([[1.0, 1.0]])
    h = lpbnn.be_forward(w_share, u, v, None, x, [0])
    assert h.shape == (1, 1)
    assert h[0, 0] == pytest.approx(-2.0)

    w = lpbnn.materialize_member_weight(w_share, u, v, 0)
    assert np.allclose(w, [[4.0], [-6.0]])
    assert np.allclose(x @ w, h)


def test_lpbnn_layer_forward_reports_terms():
    rng = np.random.default_rng(0)
    m, p, d, members = 5, 3, 2, 2
    out, kl, recon = lpbnn.lpbnn_layer_forward(
        rng.normal(size=(m, p)),
        [np.ones(m) for _ in range(members)],
        [np.ones(p) for _ in range(members)],
        np.zeros(p),
        rng.normal(scale=0.1, size=(m, 2 * d)),
        np.zeros(2 * d),
        rng.normal(scale=0.1, size=(d, m)),
        np.ones(m),
        rng.normal(size=(4, m)),
        [0, 0, 1, 1],
        seed=7,
    )
    assert out.shape == (4, p)
    assert kl >= 0.0
    assert recon >= 0.0


def test_metric_values():
    probs = np.array([[[0.6, 0.4], [0.2, 0.8]], [[0.2, 0.8], [0.4, 0.6]]])
    mean = lpbnn.ensemble_predict(probs)
    assert np.allclose(mean, [[0.4, 0.6], [0.3, 0.7]])

    assert lpbnn.auroc([0.9, 0.6], [0.7, 0.1]) == pytest.approx(0.75)
    assert lpbnn.aupr([0.9], [0.1, 0.2]) == pytest.approx(1.0)
    assert lpbnn.fpr_at_95_tpr([0.8, 0.9], [0.1]) == 0.0

    certain = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert lpbnn.ece(certain, [0, 1]) == 0.0
    assert lpbnn.accuracy(certain, [0, 1]) == 1.0

    entropy = lpbnn.predictive_entropy(np.array([[0.25, 0.25, 0.25, 0.25]]))
    assert entropy[0] == pytest.approx(math.log(4.0))

    stats = lpbnn.diversity_stats([[1, 0, 1, 1, 0], [1, 0, 1, 1, 0]])
    assert stats["q_statistic"] == 1.0


def test_kl_and_rank_helpers():
    assert lpbnn.kl_diag_gaussian_std(np.zeros(3), np.ones(3)) == 0.0
    assert lpbnn.kl_diag_gaussian_std(np.array([1.0]), np.array([1.0])) == pytest.approx(0.5)

    outer = np.outer([1.0, -2.0, 0.5], [2.0, 1.0])
    assert lpbnn.rank_approx_error(outer, 1) <= 1e-10
    sv = lpbnn.singular_values(np.eye(2))
    assert np.allclose(sv, [1.0, 1.0])

    cov = lpbnn.implicit_covariance_matrix(np.array([[1.0], [2.0]]), np.array([0.5]))
    assert np.allclose(cov, [[0.5, 1.0], [1.0, 2.0]])


def test_generate_and_run(tmp_path):
    config = """
model_kind = batchensemble
ensemble_size = 2
layer_widths = 8
epochs = 2
batch_size = 32
n_train = 128
n_test = 64
n_classes = 3
input_dim = 4
corruption_stds = 1.0
seed = 5
"""
    data = lpbnn.generate_dataset(config)
    assert data["train_x"].shape == (128, 4)
    assert data["n_classes"] == 3

    metrics = lpbnn.run(config)
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert 0.0 <= metrics["ece"] <= 1.0
    assert metrics["divergence_epoch"] is None

    # Same config, same numbers.
    again = lpbnn.run(config)
    assert again["accuracy"] == metrics["accuracy"]
    assert again["nll"] == metrics["nll"]


def test_config_errors_surface_as_python_exceptions():
    with pytest.raises(ValueError):
        lpbnn.run("bogus_key = 1\n")
