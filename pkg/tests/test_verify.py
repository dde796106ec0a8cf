import dataclasses
import json

import numpy as np
import pytest

from lossland.constructions import affine_embed, constant_embed
from lossland.schemes import Dataset, FeedForwardNN, act, random_params
from lossland.verify import (
    SpuriousCertificate,
    check_local_growth,
    check_spurious,
    check_stationarity,
    classify_point,
    spurious_certificate,
    verify_certificate,
)
from lossland.yspace import YVector, orthonormalize

LEAKY = FeedForwardNN(1, (2, 2), 1, (act("leaky_relu", 0.1), act("leaky_relu", 0.1)))
DS5 = Dataset(np.arange(5.0)[:, None])


@pytest.fixture(scope="module")
def cert():
    emb = affine_embed(LEAKY, DS5, [2.0], [1.0])
    return spurious_certificate(emb, 2.0, C=1.0, seed=0, growth_samples=50)


def test_certificate_passes(cert):
    assert cert.kind == "spurious-min" and cert.gap > 0
    assert check_spurious(cert)
    assert all(r[3] for r in cert.growth_report)
    assert cert.gap >= 1.0


def test_stationarity_examples(cert):
    gn, ok = check_stationarity(LEAKY, cert.alpha_bar, DS5, cert.y_d)
    assert ok and gn <= 1e-12
    rng = np.random.default_rng(0)
    a = random_params(LEAKY, rng)
    assert not check_stationarity(LEAKY, a, DS5, YVector(rng.standard_normal(5)))[1]


def test_growth_zero_perturbation(cert):
    rows = check_local_growth(LEAKY, cert, 0.0, 3, seed=0)
    assert all(r[1] == 0 and r[2] == 0 for r in rows)


def test_negative_controls(cert):
    assert not check_spurious(dataclasses.replace(cert, witness=cert.alpha_bar, witness_loss=cert.loss_at_bar))
    tampered = dataclasses.replace(cert, y_d=cert.y_d + YVector(np.full(5, 0.01)))
    assert not check_spurious(tampered)
    # v gets a component inside the embedding subspace: equality no longer holds
    V = orthonormalize([YVector(np.ones(5)), YVector(np.arange(5.0))])
    w = cert.v + 1e-2 * V.vectors[0]
    bent = dataclasses.replace(cert, y_d=cert.y_d - cert.s * cert.v + cert.s * w)
    rows = check_local_growth(LEAKY, bent, cert.rho, 50, seed=1)
    assert not all(r[3] for r in rows)


def test_json_roundtrip(cert):
    d = json.loads(json.dumps(cert.to_dict()))
    back = SpuriousCertificate.from_dict(d)
    assert np.array_equal(back.alpha_bar, cert.alpha_bar)
    assert back.gap == cert.gap
    assert verify_certificate(back, 50)["pass"]
    d["x_d"][0][0] = 0.5
    with pytest.raises(ValueError):
        SpuriousCertificate.from_dict(d)


def test_classify_constant_and_affine_embeddings():
    net = FeedForwardNN(1, (4,), 1, (act("relu"),))
    # the constant output equals the label mean, so alpha_bar is stationary
    emb = constant_embed(net, DS5, [0.5])
    y = YVector(np.array([1.0, -1.0, 0.5, 0.0, 2.0]))
    c = classify_point(net, emb.alpha_bar, DS5, y, emb.rho)
    assert c.grad_norm <= 1e-12
    assert c.label == "local-min-like"
    assert c.witness_gap > 0
    leaky_emb = affine_embed(LEAKY, DS5, [2.0], [1.0])
    cert = spurious_certificate(leaky_emb, 2.0, seed=3)
    c = classify_point(LEAKY, cert.alpha_bar, DS5, cert.y_d, leaky_emb.rho)
    assert c.label in ("local-min-like", "inconclusive")
