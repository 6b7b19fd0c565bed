from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import threshold_model
from smoothcert import spd
from smoothcert.classifier import Classifier
from smoothcert.errors import DimMismatch, DomainError
from smoothcert.smoothing import (
    ABSTAIN,
    CHUNK,
    Certificate,
    SmoothingSpec,
    certified_radius_gap,
    certified_radius_iso,
    mc_class_probs,
    mc_vote_counts,
    predict_certify,
    proxy_radius,
    standard_normal_draws,
)
from smoothcert.stats import ConfidenceParams

PHI = NormalDist()


def test_constant_classifier_probs_exact():
    f = Classifier.constant(3, 4, label=1)
    for spec in (SmoothingSpec.isotropic(2.0), SmoothingSpec.diagonal([1, 2, 3]),
                 SmoothingSpec.full(np.diag([1.0, 2.0, 3.0]))):
        np.testing.assert_array_equal(mc_class_probs(f, np.zeros(3), spec, 500, seed=1), np.eye(4)[1])


def test_vanishing_noise_recovers_base_output():
    f = Classifier.init([4, 6, 3], seed=0)
    x = np.array([0.1, -0.3, 0.2, 0.5])
    p = mc_class_probs(f, x, SmoothingSpec.isotropic(1e-9), 200, seed=0)
    np.testing.assert_allclose(p, f.forward(x), atol=1e-6)


def test_threshold_at_boundary_is_one_half():
    f = threshold_model(0.0)
    n = 10_000
    p = mc_class_probs(f, np.zeros(1), SmoothingSpec.isotropic(0.5), n, seed=3)
    assert abs(p[0] - 0.5) <= 3 / np.sqrt(n)


@pytest.mark.parametrize("b,sigma", [(0.1, 0.25), (0.3, 0.5), (-0.2, 0.4)])
def test_threshold_matches_gaussian_cdf(b, sigma):
    n = 10_000
    p = mc_class_probs(threshold_model(b), np.zeros(1), SmoothingSpec.isotropic(sigma), n, seed=11)
    target = PHI.cdf(b / sigma)
    assert abs(p[0] - target) <= 3 * np.sqrt(target * (1 - target) / n)


def test_draws_independent_of_chunking():
    big = standard_normal_draws(5, CHUNK + 10, 3)
    small = standard_normal_draws(5, 100, 3)
    np.testing.assert_array_equal(big[:100], small)
    assert not np.array_equal(big[:10], standard_normal_draws(5, 10, 3, stream=99))


def test_rotational_covariance_exact(rng):
    f = Classifier.init([3, 5, 4], seed=2)
    q = spd.random_orthogonal(rng, 3)
    c = spd.random_spd(rng, 3)
    x = rng.standard_normal(3)
    z = rng.standard_normal((400, 3))
    p = mc_class_probs(f, x, SmoothingSpec.full(c), 0, 0, z=z)
    p_rot = mc_class_probs(f.rotate_inputs(q), q @ x, SmoothingSpec.full(q @ c @ q.T), 0, 0, z=z @ q.T)
    np.testing.assert_allclose(p_rot, p, atol=1e-12)


def test_radius_oracles():
    assert certified_radius_iso(0.975, 0.025, 1.0) == pytest.approx(1.959964, abs=1e-4)
    assert certified_radius_gap(0.99, 0.01) == pytest.approx(4.652696, abs=1e-4)
    assert certified_radius_gap(0.5, 0.5) == 0.0
    assert certified_radius_iso(0.7, 0.7, 3.0) == 0.0
    with pytest.raises(DomainError):
        certified_radius_gap(1.0, 0.0)


@settings(max_examples=50)
@given(st.floats(0.5, 0.9999), st.floats(0.01, 5.0))
def test_radius_consistency_and_linearity(p_a, sigma):
    p_b = 1 - p_a
    r = certified_radius_iso(p_a, p_b, sigma)
    assert r == pytest.approx(0.5 * sigma * certified_radius_gap(p_a, p_b), rel=1e-12)
    assert certified_radius_iso(p_a, p_b, 2 * sigma) == pytest.approx(2 * r, rel=1e-12)
    assert r == pytest.approx(sigma * PHI.inv_cdf(p_a), rel=1e-9, abs=1e-12)


def test_proxy_radius_examples(rng):
    assert proxy_radius(2.0, SmoothingSpec.isotropic(0.25), 7) == pytest.approx(0.5)
    assert proxy_radius(1.0, SmoothingSpec.diagonal([1.0, 4.0]), 2) == pytest.approx(2.0)
    for _ in range(5):
        q = spd.random_orthogonal(rng, 2)
        spec = SmoothingSpec.full(q @ np.diag([1.0, 4.0]) @ q.T)
        assert proxy_radius(1.0, spec, 2) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(DomainError):
        proxy_radius(-1.0, SmoothingSpec.isotropic(1.0), 1)


def test_spec_validation_and_json():
    with pytest.raises(DomainError):
        SmoothingSpec.isotropic(0.0)
    with pytest.raises(DomainError):
        SmoothingSpec.diagonal([1.0, -1.0])
    with pytest.raises(DomainError):
        SmoothingSpec.full(np.diag([1.0, 0.0]))
    with pytest.raises(DomainError):
        SmoothingSpec("cauchy", 1.0)
    for spec in (SmoothingSpec.isotropic(0.3), SmoothingSpec.diagonal([0.1, 0.2]),
                 SmoothingSpec.full([[2.0, 0.5], [0.5, 1.0]])):
        back = SmoothingSpec.from_json(spec.to_json())
        np.testing.assert_array_equal(back.matrix(2), spec.matrix(2))


def test_perturb_dim_mismatch():
    with pytest.raises(DimMismatch):
        SmoothingSpec.diagonal([1.0, 2.0]).perturb(np.zeros(3), np.zeros((4, 3)))
    with pytest.raises(DimMismatch):
        SmoothingSpec.isotropic(1.0).perturb(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(DimMismatch):
        mc_class_probs(Classifier.init([3, 2]), np.zeros(4), SmoothingSpec.isotropic(1.0), 10, 0)


def test_constant_classifier_certificate():
    f = Classifier.constant(2, 3, label=2)
    conf = ConfidenceParams(n=10_000)
    cert = predict_certify(f, np.zeros(2), SmoothingSpec.isotropic(0.5), conf, seed=0, label=2)
    bound = 0.001 ** (1 / 10_000)
    assert cert.predicted_class == 2
    assert cert.p_a_lower == pytest.approx(bound, rel=1e-12)
    assert cert.radius_gap == pytest.approx(2 * PHI.inv_cdf(bound), rel=1e-9)
    assert cert.certified_radius == pytest.approx(0.5 * cert.radius_gap)
    assert cert.proxy_radius == pytest.approx(0.5 * cert.radius_gap * 0.5)
    assert cert.correct


@pytest.mark.parametrize("n", [10, 50])
def test_constant_classifier_never_abstains_small_n(n):
    f = Classifier.constant(1, 2)
    cert = predict_certify(f, np.zeros(1), SmoothingSpec.isotropic(1.0), ConfidenceParams(n0=5, n=n), seed=1)
    assert not cert.abstained


def test_coin_flip_abstains():
    # the step sits at the input, so symmetric noise lands on each side half the time
    f = threshold_model(0.0)
    cert = predict_certify(f, np.zeros(1), SmoothingSpec.isotropic(1.0), ConfidenceParams(n=10_000), seed=2)
    assert cert.abstained
    assert cert.predicted_class == ABSTAIN
    assert cert.radius_gap == 0.0 and cert.proxy_radius == 0.0


def test_certification_is_deterministic():
    f = Classifier.init([2, 8, 3], seed=5)
    spec = SmoothingSpec.diagonal([0.3, 0.6])
    a = predict_certify(f, np.array([0.2, 0.1]), spec, ConfidenceParams(n=2000), seed=9)
    b = predict_certify(f, np.array([0.2, 0.1]), spec, ConfidenceParams(n=2000), seed=9)
    assert (a.predicted_class, a.p_a_lower, a.radius_gap) == (b.predicted_class, b.p_a_lower, b.radius_gap)


def test_vote_counts_total():
    f = Classifier.init([2, 4, 3], seed=1)
    counts = mc_vote_counts(f, np.zeros(2), SmoothingSpec.isotropic(1.0), CHUNK + 7, seed=0)
    assert counts.sum() == CHUNK + 7


def _smoothed_class(f, x, spec, n, seed):
    return int(np.argmax(mc_vote_counts(f, x, spec, n, seed)))


def test_half_gap_region_is_sound_and_full_gap_is_not():
    """On a linear boundary the certified radius is half the quantile gap.

    Class 0 holds for x1 < 0.5. At x = 0 with sigma = 0.5, moving 0.99 of the
    half-gap radius toward the boundary keeps the smoothed class; moving 0.99
    of the full gap crosses it.
    """
    f = Classifier([np.array([[-1e4, 1e4], [0.0, 0.0]]) / 2], [np.array([0.5e4, -0.5e4]) / 2])
    spec = SmoothingSpec.isotropic(0.5)
    x = np.zeros(2)
    cert = predict_certify(f, x, spec, ConfidenceParams(n=100_000), seed=0)
    assert cert.predicted_class == 0
    toward = np.array([1.0, 0.0])
    half = x + 0.99 * cert.certified_radius * 0.5 * toward
    full = x + 0.99 * cert.radius_gap * 0.5 * toward
    assert _smoothed_class(f, half, spec, 100_000, 1) == 0
    assert _smoothed_class(f, full, spec, 100_000, 1) == 1


def test_certificate_properties():
    spec = SmoothingSpec.diagonal([1.0, 4.0])
    c = Certificate(0, "ANCER", 1, 0.9, 3.0, spec, 2, label=1)
    assert c.det_root == pytest.approx(2.0)
    assert c.lambda_min == 1.0
    assert c.proxy_radius == pytest.approx(3.0)
    assert c.correct
    c.predicted_class = ABSTAIN
    assert c.proxy_radius == 0.0 and not c.correct
