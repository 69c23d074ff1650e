import math
import os

import numpy as np
import pytest

import l2flow

DATA_DIR = os.environ.get("L2FLOW_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "..", "data", "mnist"))


def random_psd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return a @ a.T / n


def test_eig_sym_reconstructs():
    k = random_psd(6, 0)
    vals, vecs = l2flow.eig_sym(k)
    assert np.all(np.diff(vals) <= 0)
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, k, atol=1e-12)


def test_closed_form_matches_ode():
    k = random_psd(8, 1)
    y = np.random.default_rng(2).standard_normal((8, 1))
    t = list(np.linspace(0.0, 200.0, 11))
    cf, cf_loss, scale = l2flow.flow_closed_form(k, y, k=2, lambda_=0.01, t=t)
    ode, ode_loss = l2flow.flow_ode(k, y, k=2, lambda_=0.01, t=t)
    for a, b in zip(cf, ode):
        np.testing.assert_allclose(a, b, atol=1e-8)
    assert scale[-1] == pytest.approx(math.exp(-2 * 0.01 * 200.0))


def test_ridge_flow_limit():
    k = random_psd(5, 3)
    y = np.ones(5)
    f = l2flow.ridge_flow(k, 0.1, y, np.zeros(5), 1e5)
    np.testing.assert_allclose(f, np.linalg.solve(k + 0.1 * np.eye(5), k @ y), atol=1e-10)


def test_homogeneity_and_ntk():
    m = l2flow.MLP([4, 16, 16, 2], activation="relu", seed=3)
    x = np.random.default_rng(4).standard_normal(4)
    assert m.homogeneity_degree == 3
    assert m.euler_residual(x) < 1e-10
    assert m.homogeneity_residual(x, 1.7) < 1e-10
    theta = m.empirical_ntk(np.random.default_rng(5).standard_normal((5, 4)))
    assert np.all(np.linalg.eigvalsh(theta) > -1e-10)


def test_checkpoint_round_trip():
    m = l2flow.MLP([3, 5, 1], seed=9)
    back = l2flow.MLP.from_checkpoint(m.to_checkpoint())
    np.testing.assert_array_equal(back.parameters(), m.parameters())


def test_train_on_synthetic_improves_accuracy():
    tr = l2flow.make_synthetic(64, 8, seed=1)
    te = l2flow.make_synthetic(200, 8, seed=2, split="test")
    model = l2flow.MLP([8, 64, 1], seed=0)
    _, metrics = l2flow.train(model, tr, te, eta=1.0, lambda_=1e-3, steps=200, loss="mse", eval_every=50)
    assert metrics["step"][0] == 0 and metrics["step"][-1] == 200
    assert metrics["test_accuracy"][-1] > metrics["test_accuracy"][0]


def test_mnist_loader():
    ds = l2flow.load_mnist(DATA_DIR, "train", n=32, seed=0, encoding="even_odd")
    assert len(ds) == 32
    assert ds.inputs.shape == (32, 784)
    assert set(np.unique(ds.targets)) <= {-1.0, 1.0}


def test_tstar_and_lambda_prediction():
    t_star, best = l2flow.extract_tstar([1, 2, 3, 4, 5], [0.5, 0.9, 0.95, 0.949, 0.94])
    assert (t_star, best) == (3.0, 0.95)
    assert l2flow.measure_c([0, 50, 100, 150], [0.1, 0.5, 0.9, 0.8], 0.05) == pytest.approx(5.0)
    assert l2flow.predict_lambda(0.0066, 200.0, first_decay=60.0) == pytest.approx(1.1e-4)


def test_autol2_decay():
    a = l2flow.AutoL2()
    for step, loss in [(10, 1.0), (20, 0.8), (30, 0.9), (40, 0.85)]:
        a.observe(step, loss, loss / 2)
    assert a.lambda_ == pytest.approx(0.01)
    assert a.min_step == pytest.approx(50.0)


def test_deep_linear():
    f, trivial = l2flow.deep_linear_fixed_point(1, 100, 0.05)
    assert f == pytest.approx(0.5) and not trivial
    g, converged = l2flow.train_deep_linear(1, 100, 0.05)
    assert converged and g == pytest.approx(f, abs=1e-6)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        l2flow.MLP([3, 4, 1], activation="tanh")
    with pytest.raises(ValueError):
        l2flow.load_mnist("/no/such/dir")
