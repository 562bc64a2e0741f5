import numpy as np
import pytest
from scipy.spatial.distance import pdist

from src.model.lifting import Dictionary, DictionarySpec, SnapshotPair, build_dictionary, lift, lift_batch
from src.utils.errors import ConfigurationError, InputError


def test_default_vdp_dictionary_has_43_observables(vdp_dictionary):
    assert vdp_dictionary.state_dim == 2
    assert vdp_dictionary.num_rbf == 40
    assert vdp_dictionary.total_dim == 43
    assert vdp_dictionary.identity_slice == slice(1, 3)


def test_lift_layout(vdp_dictionary):
    x = np.array([0.3, -1.2])
    row = lift(vdp_dictionary, x)
    assert row.shape == (43,)
    assert row[0] == 1.0
    np.testing.assert_array_equal(row[1:3], x)
    assert np.all((row[3:] > 0) & (row[3:] <= 1))


def test_rbf_equals_one_at_its_center(vdp_dictionary):
    center = vdp_dictionary.rbf_centers[5]
    assert lift(vdp_dictionary, center)[3 + 5] == pytest.approx(1.0)


def test_lift_batch_matches_single_lifts(vdp_dictionary, rng):
    X = rng.standard_normal((7, 2))
    batch = lift_batch(vdp_dictionary, X)
    for i in range(7):
        np.testing.assert_allclose(batch[i], lift(vdp_dictionary, X[i]), rtol=0, atol=1e-15)


def test_lift_batch_of_nothing_is_empty(vdp_dictionary):
    assert lift_batch(vdp_dictionary, np.empty((0, 2))).shape == (0, 43)


def test_lift_rejects_non_finite_and_wrong_dimension(vdp_dictionary):
    with pytest.raises(InputError):
        lift(vdp_dictionary, [np.nan, 0.0])
    with pytest.raises(InputError):
        lift(vdp_dictionary, [1.0, 2.0, 3.0])


def test_bandwidth_defaults_to_median_center_distance(vdp_dictionary):
    expected = np.median(pdist(vdp_dictionary.rbf_centers))
    assert vdp_dictionary.rbf_bandwidth == pytest.approx(expected)


def test_bandwidth_override(vdp_traj):
    d = build_dictionary(DictionarySpec(num_rbf=10, bandwidth=0.3), vdp_traj[:100])
    assert d.rbf_bandwidth == 0.3


def test_centers_are_deterministic_for_a_seed(vdp_traj):
    spec = DictionarySpec(num_rbf=12, seed=3)
    a = build_dictionary(spec, vdp_traj[:200])
    b = build_dictionary(spec, vdp_traj[:200])
    np.testing.assert_array_equal(a.rbf_centers, b.rbf_centers)


def test_too_few_distinct_points_reduces_centers_with_warning():
    warmup = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        d = build_dictionary(DictionarySpec(num_rbf=10), warmup)
    assert d.num_rbf == 3
    assert d.total_dim == 1 + 2 + 3


def test_single_distinct_point_uses_fallback_bandwidth():
    with pytest.warns(RuntimeWarning):
        d = build_dictionary(DictionarySpec(num_rbf=4), np.ones((5, 2)))
    assert d.num_rbf == 1
    assert d.rbf_bandwidth == 1.0


def test_empty_warmup_needs_no_rbfs():
    with pytest.raises(ConfigurationError):
        build_dictionary(DictionarySpec(num_rbf=5), np.empty((0, 2)))
    d = build_dictionary(DictionarySpec(num_rbf=0), np.empty((0, 2)), state_dim=2)
    assert d.total_dim == 3


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        DictionarySpec(num_rbf=0, include_identity=False, include_constant=False)
    with pytest.raises(ConfigurationError):
        DictionarySpec(num_rbf=-1)
    with pytest.raises(ConfigurationError):
        DictionarySpec(bandwidth=0.0)


def test_spec_from_mapping_accepts_flag_names():
    spec = DictionarySpec.from_mapping({"rbf": 15, "include-identity": False, "lambda": 0.1, "bandwidth": None})
    assert spec.num_rbf == 15
    assert spec.include_identity is False
    assert spec.bandwidth is None


def test_dictionary_centers_are_read_only(vdp_dictionary):
    with pytest.raises(ValueError):
        vdp_dictionary.rbf_centers[0, 0] = 10.0


def test_rbf_only_dictionary_has_no_readout(vdp_traj):
    d = build_dictionary(DictionarySpec(num_rbf=5, include_identity=False, include_constant=False), vdp_traj[:50])
    assert d.identity_slice is None
    assert d.total_dim == 5


def test_snapshot_pair_validation():
    with pytest.raises(InputError):
        SnapshotPair([1.0, 2.0], [1.0])
    with pytest.raises(InputError):
        SnapshotPair([1.0, np.inf], [1.0, 2.0])
    assert SnapshotPair([1.0, 2.0], [3.0, 4.0]).dim == 2


def test_dictionary_rejects_bad_bandwidth():
    with pytest.raises(ConfigurationError):
        Dictionary(state_dim=2, include_constant=True, include_identity=True,
                   rbf_centers=np.zeros((1, 2)), rbf_bandwidth=-1.0)
