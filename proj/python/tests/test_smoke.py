import itertools

import numpy as np
import pytest

import hdnn


def test_count_params():
    assert hdnn.count_params("highway", 440, 128, 10, 3927) == 744407
    assert hdnn.count_params("plain", 440, 2048, 6, 3927) == 29931351
    assert hdnn.count_gate_params(128) == 32768


def test_forward_shapes_and_parameters():
    net = hdnn.build_network(6, 8, 3, 4, arch="highway", seed=3)
    out = net.forward(np.random.default_rng(0).normal(size=(5, 6)))
    assert out["posteriors"].shape == (5, 4)
    np.testing.assert_allclose(out["posteriors"].sum(axis=1), 1.0, atol=1e-12)
    params = net.parameters()
    assert "gate.transform" in params and params["gate.transform"].shape == (8, 8)
    assert sum(p.size for p in params.values()) == net.num_params()


def test_kd_with_one_hot_targets_is_ce():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(4, 3))
    labels = [0, 2, 1, 1]
    onehot = np.eye(3)[labels]
    post = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    ce, dce = hdnn.ce_loss(post, labels)
    kd, dkd = hdnn.kd_loss(z, onehot)
    assert abs(ce - kd) < 1e-10
    np.testing.assert_allclose(dce, dkd, atol=1e-12)
    h, dh = hdnn.hybrid_loss(z, onehot, labels, q=0.0)
    assert h == kd


def test_ce_gradient_matches_numpy_difference():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 4))
    labels = [3, 0, 1]

    def loss(zz):
        p = np.exp(zz - zz.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        return hdnn.ce_loss(p, labels)[0]

    _, grad = hdnn.ce_loss(np.exp(z) / np.exp(z).sum(axis=1, keepdims=True), labels)
    fd = np.zeros_like(z)
    for i, j in itertools.product(range(3), range(4)):
        e = np.zeros_like(z)
        e[i, j] = 1e-5
        fd[i, j] = (loss(z + e) - loss(z - e)) / 2e-5
    np.testing.assert_allclose(grad, fd, atol=1e-7)


def test_forward_backward_against_enumeration():
    arcs = [hdnn.LatticeArc(0, 1, 0, 0, -0.1), hdnn.LatticeArc(0, 1, 0, 1, -0.2),
            hdnn.LatticeArc(1, 2, 1, 2, 0.0), hdnn.LatticeArc(1, 2, 1, 0, -0.3)]
    lat = hdnn.Lattice(2, 3, arcs)
    scores = np.random.default_rng(3).normal(size=(2, 3))
    gamma, total = hdnn.forward_backward(lat, scores)
    paths = [(a, b) for a in (0, 1) for b in (2, 3)]
    logp = {p: sum(scores[arcs[i].frame, arcs[i].state] + arcs[i].graph_logweight for i in p) for p in paths}
    z = np.logaddexp.reduce(list(logp.values()))
    assert abs(total - z) < 1e-12
    for i in range(4):
        assert abs(gamma[i] - sum(np.exp(v - z) for p, v in logp.items() if i in p)) < 1e-12


def test_smbr_single_path():
    lat = hdnn.build_lattice([0, 1, 2], num_states=3, branch=1)
    r = hdnn.smbr_objective(lat, np.full((3, 3), 1 / 3), [0, 1, 2])
    assert r["expected_accuracy"] == pytest.approx(3.0)
    assert not r["dlogits"].any()


def test_splice_and_corpus():
    corpus = hdnn.gen_corpus({"num_states": "4", "feature_dim": "3", "frames_per_utterance": "10", "seed": "5"})
    utt = corpus["train"][0]
    assert utt["features"].shape == (10, 3)
    assert len(utt["alignment"]) == 10
    assert hdnn.splice(utt["features"], 2).shape == (10, 15)
    np.testing.assert_array_equal(hdnn.splice(utt["features"], 0), utt["features"])
    again = hdnn.gen_corpus({"num_states": "4", "feature_dim": "3", "frames_per_utterance": "10", "seed": "5"})
    np.testing.assert_array_equal(again["train"][0]["features"], utt["features"])


def test_train_and_round_trip(tmp_path):
    corpus = hdnn.gen_corpus({"num_states": "4", "feature_dim": "3", "mean_scale": "3", "seed": "2"})
    x = np.vstack([hdnn.splice(u["features"], 1) for u in corpus["train"]])
    y = [s for u in corpus["train"] for s in u["alignment"]]
    cx = np.vstack([hdnn.splice(u["features"], 1) for u in corpus["cv"]])
    cy = [s for u in corpus["cv"] for s in u["alignment"]]
    net, reports = hdnn.train_ce(hdnn.build_network(9, 16, 3, 4), x, y, cx, cy, lr=0.1, epochs=5, batch=32)
    assert reports[-1]["cv_frame_error"] < reports[0]["cv_frame_error"]
    student, kd_reports = hdnn.distill(hdnn.build_network(9, 8, 3, 4, seed=2), net, x, y, cx, cy, epochs=2, batch=32)
    assert len(kd_reports) == 3
    path = tmp_path / "model.bin"
    net.save(str(path))
    assert hdnn.load_model(str(path)) == net


def test_errors_surface_as_value_errors():
    with pytest.raises(ValueError):
        hdnn.build_network(4, 8, 3, 3, arch="convolutional")
    with pytest.raises(hdnn.HdnnError):
        hdnn.build_lattice([0, 1], num_states=2, branch=3)
