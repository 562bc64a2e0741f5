import numpy as np
import pytest

from src.analysis.spectral import (
    EigenfunctionField,
    GridWindow,
    limit_cycle_overlap,
    one_step_rmse,
    predict,
    spectrum,
    stability_report,
    eigenfunction_on_grid,
)
from src.model.lifting import DictionarySpec, build_dictionary
from src.simulation.dynamics import reference_limit_cycle
from src.utils.errors import ConfigurationError, InputError


def rotation(theta, radius=1.0):
    return radius * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


def test_identity_operator_spectrum():
    s = spectrum(np.eye(2))
    np.testing.assert_allclose(s.eigenvalues, [1.0, 1.0])
    assert s.right_eigenvectors.shape == (2, 2)
    assert np.all(s.residuals <= 1e-12)


def test_diagonal_operator_sorted_by_modulus():
    s = spectrum(np.diag([0.5, -0.9]))
    np.testing.assert_allclose(s.eigenvalues, [-0.9, 0.5])
    report = stability_report(s)
    assert report.stable and report.max_modulus == pytest.approx(0.9) and report.count_outside == 0


def test_rotation_gives_exact_conjugate_pair():
    s = spectrum(rotation(0.3, 0.95))
    np.testing.assert_allclose(s.moduli, [0.95, 0.95], rtol=1e-12)
    assert s.eigenvalues[1] == np.conj(s.eigenvalues[0])
    assert s.eigenvalues[0].imag < 0  # imag ascending breaks the tie
    np.testing.assert_array_equal(s.right_eigenvectors[:, 1], np.conj(s.right_eigenvectors[:, 0]))


def test_unstable_operator_is_reported():
    report = stability_report(spectrum(np.diag([1.2, 0.4, 1.05])))
    assert not report.stable
    assert report.count_outside == 2
    assert report.max_modulus == pytest.approx(1.2)
    assert stability_report(spectrum(np.diag([1.05])), tolerance=0.1).stable


def test_eigenvectors_are_normalized_with_real_leading_component(rng):
    s = spectrum(rng.standard_normal((6, 6)))
    np.testing.assert_allclose(np.linalg.norm(s.right_eigenvectors, axis=0), 1.0, rtol=1e-12)
    for j in range(6):
        column = s.right_eigenvectors[:, j]
        lead = column[np.argmax(np.abs(column) > 1e-12)]
        assert lead.real > 0 and abs(lead.imag) <= 1e-12
    assert np.all(s.residuals <= 1e-10)


def test_spectrum_is_deterministic(rng):
    K = rng.standard_normal((8, 8))
    a, b = spectrum(K), spectrum(K)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.right_eigenvectors, b.right_eigenvectors)


def test_spectrum_rejects_bad_operators():
    with pytest.raises(InputError):
        spectrum(np.ones((2, 3)))
    with pytest.raises(InputError):
        spectrum(np.array([[np.nan]]))


def test_select_by_index_and_target():
    s = spectrum(np.diag([0.2, 0.99, -0.5]))
    assert s.select(0) == 0
    assert s.eigenvalues[s.select(1 + 0j)] == pytest.approx(0.99)
    assert s.eigenvalues[s.select(-0.4)] == pytest.approx(-0.5)
    with pytest.raises(ConfigurationError):
        s.select(5)


def test_eigenfunction_of_identity_dictionary_is_linear(identity_dictionary):
    d = identity_dictionary(2)
    s = spectrum(np.diag([0.9, 0.5]))
    window = GridWindow((-1.0, 1.0), (-2.0, 2.0), resolution=(5, 7))
    field = eigenfunction_on_grid(d, s, which=0, window=window)
    assert field.values.shape == (7, 5)
    assert field.eigenvalue == pytest.approx(0.9)
    phi = s.right_eigenvectors[:, 0]
    np.testing.assert_allclose(field.values, np.outer(field.x2 * phi[1], np.ones(5)) + field.x1 * phi[0])
    frame = field.to_frame()
    assert list(frame.columns) == ["x1", "x2", "re", "im", "modulus"]
    assert len(frame) == 35


def test_higher_dimensional_grid_needs_base_state(identity_dictionary):
    d = identity_dictionary(4)
    s = spectrum(np.eye(4) * 0.5)
    with pytest.raises(ConfigurationError):
        eigenfunction_on_grid(d, s, window=GridWindow((-1, 1), (-1, 1), resolution=(3, 3)))
    field = eigenfunction_on_grid(
        d, s, window=GridWindow((-1, 1), (-1, 1), resolution=(3, 3), coords=(0, 2), base_state=(0, 5, 0, 7))
    )
    assert field.coords == (0, 2)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"x1_bounds": (1.0, -1.0), "x2_bounds": (0.0, 1.0)},
        {"x1_bounds": (0.0, 1.0), "x2_bounds": (0.0, np.inf)},
        {"x1_bounds": (0.0, 1.0), "x2_bounds": (0.0, 1.0), "resolution": (1, 5)},
        {"x1_bounds": (0.0, 1.0), "x2_bounds": (0.0, 1.0), "coords": (1, 1)},
    ],
)
def test_grid_window_validation(kwargs):
    with pytest.raises(ConfigurationError):
        GridWindow(**kwargs)


def ring_field(radius=1.0, n=81):
    x = np.linspace(-2, 2, n)
    g1, g2 = np.meshgrid(x, x)
    values = np.exp(-((np.hypot(g1, g2) - radius) ** 2) / 0.02).astype(complex)
    return EigenfunctionField(x1=x, x2=x, values=values, eigenvalue=1 + 0j)


def circle(radius=1.0, n=400):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return radius * np.column_stack([np.cos(t), np.sin(t)])


def test_overlap_of_a_field_peaked_on_the_orbit():
    score = limit_cycle_overlap(ring_field(), circle(), radius=0.1)
    assert score.coverage >= 0.9
    assert score.concentration >= 0.6
    assert score.exclusion >= 0.9
    assert score.score >= 0.9


def test_overlap_of_a_misplaced_field_is_poor():
    good = limit_cycle_overlap(ring_field(1.0), circle(1.0), radius=0.1)
    bad = limit_cycle_overlap(ring_field(1.6), circle(1.0), radius=0.1)
    assert bad.concentration < good.concentration
    assert bad.score < 0.8 < good.score


def test_flat_field_does_not_pass_for_a_limit_cycle():
    x = np.linspace(-3, 3, 61)
    v = np.linspace(-3.5, 3.5, 71)
    flat = EigenfunctionField(x1=x, x2=v, values=np.ones((71, 61), dtype=complex), eigenvalue=1 + 0j)
    score = limit_cycle_overlap(flat, reference_limit_cycle(mu=0.8), radius=0.2)
    assert score.coverage == 1.0
    assert score.exclusion == 0.0
    assert score.score == 0.5


def test_overlap_threshold_ignores_the_tube_values():
    # a ridge at 1.0 off the orbit outranks a plateau at 0.3 on it
    x = np.linspace(-2, 2, 81)
    g1, g2 = np.meshgrid(x, x)
    r = np.hypot(g1, g2)
    values = np.where(np.abs(r - 1.0) <= 0.15, 0.3, 0.0) + np.where(np.abs(r - 1.6) <= 0.15, 1.0, 0.0)
    field = EigenfunctionField(x1=x, x2=x, values=values.astype(complex), eigenvalue=1 + 0j)
    score = limit_cycle_overlap(field, circle(1.0), radius=0.1)
    assert score.coverage == 0.0


def test_overlap_edge_cases():
    zero = EigenfunctionField(x1=np.linspace(-1, 1, 5), x2=np.linspace(-1, 1, 5), values=np.zeros((5, 5)), eigenvalue=1)
    assert limit_cycle_overlap(zero, circle(0.5), radius=0.5).score == 0.0
    with pytest.raises(InputError):
        limit_cycle_overlap(zero, circle(10.0), radius=0.1)
    with pytest.raises(ConfigurationError):
        limit_cycle_overlap(ring_field(), circle(), level=1.5)


def test_predict_linear_rollout(identity_dictionary):
    d = identity_dictionary(2)
    K = rotation(0.2).T
    out = predict(K, d, [1.0, 0.0], 3)
    assert out.shape == (4, 2)
    np.testing.assert_allclose(out[3], [np.cos(0.6), np.sin(0.6)], atol=1e-12)
    relifted = predict(K, d, [1.0, 0.0], 3, mode="relift_each_step")
    np.testing.assert_allclose(relifted, out, atol=1e-12)


def test_predict_zero_steps_returns_initial_state(identity_dictionary):
    out = predict(np.eye(2), identity_dictionary(2), [0.3, -0.2], 0)
    np.testing.assert_array_equal(out, [[0.3, -0.2]])


def test_predict_validation(identity_dictionary, vdp_traj):
    d = identity_dictionary(2)
    with pytest.raises(ConfigurationError):
        predict(np.eye(2), d, [0.0, 0.0], -1)
    with pytest.raises(ConfigurationError):
        predict(np.eye(2), d, [0.0, 0.0], 2, mode="sideways")
    with pytest.raises(InputError):
        predict(np.eye(3), d, [0.0, 0.0], 2)
    rbf_only = build_dictionary(DictionarySpec(num_rbf=4, include_identity=False, include_constant=False), vdp_traj[:50])
    with pytest.raises(ConfigurationError):
        predict(np.eye(4), rbf_only, [0.0, 0.0], 2)


def test_one_step_rmse(rng):
    psi_x = rng.standard_normal((20, 3))
    K = rng.standard_normal((3, 3))
    assert one_step_rmse(K, psi_x, psi_x @ K) == pytest.approx(0.0, abs=1e-12)
    assert one_step_rmse(np.zeros((3, 3)), psi_x, np.ones((20, 3))) == pytest.approx(np.sqrt(3.0))
    with pytest.raises(InputError):
        one_step_rmse(K, np.empty((0, 3)), np.empty((0, 3)))
