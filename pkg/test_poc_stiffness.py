"""Tests for the arm stiffness model, GMM/GMR learning and the online POC layer"""

import numpy as np
import pytest

from impact_catching import poc_stiffness
from impact_catching.errors import StiffnessModelError, TrainingError
from impact_catching.poc_stiffness import (
    DEMO_COLUMNS,
    ArmTriangle,
    ProfileShape,
    bundled_profile,
    chol_decode,
    chol_encode,
    estimate_stiffness,
    gmr_predict,
    load_profile,
    plan_poc,
    poc_step,
    predict_stiffness,
    read_demonstrations,
    save_profile,
    synth_demonstrations,
    train_gmm,
    write_demonstrations,
)


def triangle(p=0.0):
    return ArmTriangle(np.zeros(3), np.array([0.2, 0.0, -0.2]), np.array([0.45, 0.0, -0.1]), p)


def random_spd(rng):
    A = rng.normal(size=(3, 3))
    return A @ A.T + 0.1 * np.eye(3)


# ============================================================
# Arm stiffness
# ============================================================
def test_rest_activation_volume():
    ellipsoid = estimate_stiffness(triangle(0.0))
    assert np.prod(np.diag(ellipsoid.D)) == pytest.approx(140.606**3, rel=1e-9)
    assert ellipsoid.c1 == 2033.325 and ellipsoid.alpha1 == 0.255 and ellipsoid.alpha2 == 2.815


def test_orthonormal_frame_and_spd():
    ellipsoid = estimate_stiffness(triangle(0.4))
    np.testing.assert_allclose(ellipsoid.V.T @ ellipsoid.V, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(ellipsoid.K_hat, ellipsoid.K_hat.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(ellipsoid.K_hat)) > 0


def test_major_axis_along_shoulder_hand():
    tri = triangle(0.2)
    ellipsoid = estimate_stiffness(tri)
    eigval, eigvec = np.linalg.eigh(ellipsoid.K_hat)
    l_hat = tri.hand / np.linalg.norm(tri.hand)
    assert abs(eigvec[:, -1] @ l_hat) == pytest.approx(1.0, abs=1e-9)


def test_collinear_triangle_rejected():
    with pytest.raises(StiffnessModelError):
        estimate_stiffness(ArmTriangle(np.zeros(3), np.array([0.1, 0, 0]), np.array([0.3, 0, 0])))


# ============================================================
# Cholesky encoding
# ============================================================
def test_identity_encoding():
    np.testing.assert_allclose(chol_encode(np.eye(3)), [1, 0, 0, 1, 0, 1])


def test_diagonal_encoding():
    np.testing.assert_allclose(chol_encode(np.diag([100.0, 400.0, 900.0])), [10, 0, 0, 20, 0, 30])


def test_round_trip():
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(1000):
        K = random_spd(rng)
        worst = max(worst, np.max(np.abs(chol_decode(chol_encode(K)) - K)) / np.max(np.abs(K)))
    assert worst <= 1e-9


def test_non_spd_rejected():
    with pytest.raises(StiffnessModelError):
        chol_encode(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(StiffnessModelError):
        chol_decode([1.0, 0.0, 0.0, 0.0, 0.0, 1.0])


# ============================================================
# GMM / GMR
# ============================================================
def gaussian_samples(n=2000, seed=41):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(7, 7)) * 0.3
    mean = rng.normal(size=7)
    return rng.multivariate_normal(mean, A @ A.T + 0.05 * np.eye(7), size=n), mean, A @ A.T + 0.05 * np.eye(7)


def test_single_gaussian_recovered():
    X, mean, cov = gaussian_samples()
    profile = train_gmm(X, K=1)
    stderr = np.sqrt(np.diag(cov) / len(X))
    assert np.all(np.abs(profile.means[0] - mean) <= 3 * stderr)
    np.testing.assert_allclose(profile.covariances[0], np.cov(X.T, bias=True) + 1e-6 * np.eye(7), atol=1e-9)


def test_training_deterministic():
    demos = synth_demonstrations(noise_std=0.02, seed=3)
    a = train_gmm(demos, K=4, seed=5)
    b = train_gmm(demos.copy(), K=4, seed=5)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covariances, b.covariances)


def test_too_few_samples():
    with pytest.raises(TrainingError):
        train_gmm(np.zeros((20, 7)), K=8)


def test_single_component_is_linear_regression():
    X, _, _ = gaussian_samples(500)
    profile = train_gmm(X, K=1)
    mu, sigma = profile.means[0], profile.covariances[0]
    for delta in (-0.5, 0.0, 1.3):
        expected = mu[1:] + sigma[1:, 0] / sigma[0, 0] * (delta - mu[0])
        np.testing.assert_allclose(gmr_predict(profile, delta), expected, atol=1e-12)


def test_scaled_training_stiffness():
    X, _, _ = gaussian_samples(500)
    scaled = X.copy()
    scaled[:, 1:] *= 2.0
    base, doubled = train_gmm(X, K=1), train_gmm(scaled, K=1)
    for delta in (-0.2, 0.4):
        np.testing.assert_allclose(gmr_predict(doubled, delta), 2.0 * gmr_predict(base, delta), rtol=1e-6)


def test_gmr_continuous():
    profile = bundled_profile()
    for delta in np.linspace(-0.27, 0.0, 11):
        assert np.max(np.abs(gmr_predict(profile, delta + 1e-6) - gmr_predict(profile, delta))) < 1e-2


def test_reconstruction_on_noise_free_profile():
    shape = ProfileShape()
    demos = synth_demonstrations(shape, noise_std=0.0)
    profile = train_gmm(demos, seed=0)
    errors = [abs(predict_stiffness(profile, d)[2, 2] - shape.target(d)) for d in demos.delta_d_m.unique()]
    assert max(errors) <= 0.02 * (shape.k_end - shape.k_start)


def test_bundled_profile_endpoints():
    profile = bundled_profile()
    assert predict_stiffness(profile, 0.0)[2, 2] < 150.0
    assert predict_stiffness(profile, profile.d_h)[2, 2] > 1000.0
    for delta in np.linspace(profile.d_h, 0.0, 28):
        assert np.min(np.linalg.eigvalsh(predict_stiffness(profile, delta))) > 0


def test_profile_file_round_trip(tmp_path):
    demos = synth_demonstrations(noise_std=0.02, seed=1)
    profile = train_gmm(demos, K=3)
    restored = load_profile(save_profile(profile, tmp_path / "profile.yaml"))
    np.testing.assert_allclose(gmr_predict(restored, -0.1), gmr_predict(profile, -0.1), rtol=1e-12)


# ============================================================
# Synthetic demonstrations
# ============================================================
def test_demonstrations_deterministic_and_spd(tmp_path):
    a = synth_demonstrations(seed=2)
    b = synth_demonstrations(seed=2)
    assert a.equals(b)
    assert list(a.columns) == DEMO_COLUMNS
    for row in a[DEMO_COLUMNS[1:]].to_numpy():
        assert np.min(np.linalg.eigvalsh(chol_decode(row))) > 0
    replayed = read_demonstrations(write_demonstrations(a, tmp_path / "demos.csv"))
    np.testing.assert_allclose(replayed.to_numpy(), a.to_numpy(), atol=1e-8)


def test_demonstration_endpoint_band():
    demos = synth_demonstrations()
    last = demos[demos.delta_d_m == demos.delta_d_m.min()][DEMO_COLUMNS[1:]].to_numpy()
    for row in last:
        assert 1000.0 <= chol_decode(row)[2, 2] <= 1300.0
    z_stiffness = [chol_decode(r)[2, 2] for r in demos[DEMO_COLUMNS[1:]].to_numpy()[:60]]
    assert all(b >= a - 1e-9 for a, b in zip(z_stiffness, z_stiffness[1:]))


# ============================================================
# POC trajectory and stiffness scaling
# ============================================================
def test_vertical_final_point():
    x_c = np.array([0.3, 0.0, 0.35, 0.0, 0.0, 0.0])
    plan = plan_poc(x_c, [0.0, 0.0, -1.0], 0.13, 0.2, a_max=20.0)
    np.testing.assert_allclose(plan.x_d_f, [0.3, 0.0, 0.22], atol=1e-15)


def test_final_point_distance_any_direction():
    rng = np.random.default_rng(42)
    for _ in range(100):
        v = rng.normal(size=3)
        plan = plan_poc(np.zeros(3), v, 0.09, 2.0, a_max=50.0)
        assert np.linalg.norm(plan.x_d_f) == pytest.approx(0.09, abs=1e-12)


def test_boundary_conditions():
    x_c = np.array([0.3, 0.1, 0.35, 0.0, 0.0, 0.0])
    v_c = np.array([0.0, 0.4, -1.0])
    plan = plan_poc(x_c, v_c, 0.09, 0.15, a_max=100.0)
    x0, v0 = plan.at(0.0)
    xf, vf = plan.at(plan.dt_poc)
    np.testing.assert_allclose(x0, x_c, atol=1e-12)
    np.testing.assert_allclose(v0[:3], v_c, atol=1e-12)
    np.testing.assert_allclose(xf[:3], plan.x_d_f, atol=1e-12)
    np.testing.assert_allclose(vf, 0.0, atol=1e-12)


def test_duration_stretched_for_acceleration():
    plan = plan_poc(np.zeros(3), [0.0, 0.0, -1.0], 0.13, 0.2, a_max=6.0)
    assert plan.dt_poc > 0.2
    assert plan.peak_acceleration() <= 6.0 + 1e-9


def test_poc_plan_errors():
    with pytest.raises(ValueError):
        plan_poc(np.zeros(3), np.zeros(3), 0.13, 0.2)
    with pytest.raises(ValueError):
        plan_poc(np.zeros(3), [0.0, 0.0, -2.0], 0.13, 0.1, a_max=6.0)


def test_full_stiffness_gives_full_gain(monkeypatch):
    class Fixed:
        d_h = -0.27

    monkeypatch.setattr(poc_stiffness, "predict_stiffness", lambda profile, delta: np.diag([750.0] * 3))
    plan = plan_poc(np.zeros(3), [0.0, 0.0, -1.0], 0.13, 0.2, a_max=20.0)
    _, _, K_p = poc_step(plan, Fixed(), np.zeros(3))
    np.testing.assert_allclose(K_p, 45.0 * np.eye(3))


def test_catch_instant_uses_zero_distance():
    profile = bundled_profile()
    plan = plan_poc(np.array([0.3, 0.0, 0.35]), [0.0, 0.0, -1.0], 0.13, 0.2, a_max=20.0)
    _, _, K_p = poc_step(plan, profile, plan.x_d_c)
    np.testing.assert_allclose(K_p, predict_stiffness(profile, 0.0) / 750.0 * 45.0)


def test_filter_step_response(monkeypatch):
    class Fixed:
        d_h = -0.27

    target = np.diag([30.0, 30.0, 12.0])
    monkeypatch.setattr(poc_stiffness, "predict_stiffness", lambda profile, delta: target / 45.0 * 750.0)
    plan = plan_poc(np.zeros(3), [0.0, 0.0, -1.0], 0.13, 0.2, a_max=20.0)
    previous = np.zeros((3, 3))
    for k in range(1, 60):
        _, _, value = poc_step(plan, Fixed(), np.zeros(3), eps=0.05, K_prev=previous, t=0.001 * k)
        np.testing.assert_allclose(value, target * (1 - 0.95**k), rtol=1e-12)
        assert np.all(np.abs(target - value) <= np.abs(target - previous) + 1e-12)
        previous = value.copy()


@pytest.mark.parametrize("eps", [0.0, 1.5])
def test_filter_parameter_out_of_range_rejected(eps):
    plan = plan_poc(np.zeros(3), [0.0, 0.0, -1.0], 0.13, 0.2, a_max=20.0)
    with pytest.raises(ValueError):
        poc_step(plan, bundled_profile(), np.zeros(3), eps=eps)
