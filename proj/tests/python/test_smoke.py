import numpy as np
import pytest

import spncf


def make_mixture(n=400, seed=4):
    means = [np.array([-3.0, 0.0]), np.array([3.0, 0.0])]
    covs = [np.eye(2), np.eye(2)]
    return spncf.gen_latent_mixture(n, 2, means, covs, seed)


def test_learn_spn_posteriors_and_roundtrip():
    rows, labels = make_mixture()
    circuit = spncf.learn_spn(rows, labels, min_instances=40, seed=9)
    assert circuit.dimension == 2
    assert circuit.num_classes == 2

    post = circuit.class_posterior(np.array([-3.0, 0.0]))
    assert abs(sum(post) - 1.0) < 1e-12
    assert post[0] > 0.99
    assert circuit.argmax_class(np.array([3.0, 0.0])) == 1

    back = spncf.Circuit.from_json(circuit.to_json())
    z = np.array([0.5, -1.0])
    assert back.log_marginal(z) == circuit.log_marginal(z)
    assert back.node_count == circuit.node_count

    grad = circuit.grad_log_marginal(z)
    h = 1e-5
    fd = (
        circuit.log_marginal(z + np.array([h, 0.0]))
        - circuit.log_marginal(z - np.array([h, 0.0]))
    ) / (2 * h)
    assert abs(grad[0] - fd) / max(1.0, abs(fd)) < 1e-4


def test_metrics():
    assert spncf.validity([0, 1, 1, 0], [1, 1, 0, 0]) == 0.5
    rows = np.array([[-1.0], [0.0], [1.0]])
    assert spncf.frechet(rows, rows, mode="standard") < 1e-6
    assert spncf.frechet(rows, rows, mode="paper") < 0.0  # not a metric

    post = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.1, 0.9]])
    stats = spncf.classifier_stats(post, [0, 1, 0, 1])
    assert stats["accuracy"] == 1.0
    assert stats["auc"] == 1.0
    assert set(stats) == {"accuracy", "mean_entropy", "auc", "precision", "recall"}

    with pytest.raises(spncf.SpncfError):
        spncf.frechet(rows[:1], rows, mode="standard")
    with pytest.raises(spncf.SpncfError):
        spncf.frechet(rows, rows, mode="sideways")


def test_train_and_counterfactual():
    data = spncf.gen_ellipse_images(n=80, side=16, noise_sigma=0.02,
                                    group_size=2,
                                    class_radii=[[3, 2], [5, 4]],
                                    jitter=0.5, seed=6)
    x = data["instances"]
    y = data["labels"]
    assert x.shape == (80, 256)
    assert sorted(set(y)) == [0, 1]

    model, history = spncf.train_vae(
        x[:64], y[:64], x[64:], y[64:], height=16, width=16,
        epochs=2, latent_dim=3, hidden=[24], batch_size=8, seed=1,
        noise_sigma=0.0,
    )
    assert model.latent_dim == 3
    assert len(history) == 2
    assert history[-1]["mae"] >= 0.0

    mu = model.encode_mean(x)
    assert mu.shape == (80, 3)
    circuit = spncf.learn_spn(mu, list(y), min_instances=20, seed=2)

    inst = x[0]
    target = (circuit.argmax_class(mu[0]) + 1) % 2
    result = spncf.generate_counterfactual(
        model, inst, target_class=target, max_steps=15, backend="spn",
        seed=3, circuit=circuit,
    )
    reps = result["replicates"]
    assert len(reps) == 1
    assert len(reps[0]["z_cf"]) == 3
    assert len(result["diff"]) == 256
    assert np.allclose(
        np.array(result["diff"]),
        np.array(result["x_cf"]) - np.array(result["x_tilde"]),
    )

    again = spncf.generate_counterfactual(
        model, inst, target_class=target, max_steps=15, backend="spn",
        seed=3, circuit=circuit,
    )
    assert reps[0]["z_cf"] == again["replicates"][0]["z_cf"]

    with pytest.raises(spncf.SpncfError):
        spncf.generate_counterfactual(model, inst, target_class=target,
                                      backend="spn", circuit=None)

    roundtrip = spncf.VaeModel.from_json(model.to_json())
    assert np.array_equal(roundtrip.encode_mean(x[:4]), mu[:4])
