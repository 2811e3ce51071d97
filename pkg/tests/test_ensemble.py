import dataclasses

import numpy as np
import pytest

from perfbnn import dataset, ensemble, synthetic
from perfbnn.calibration import CalibrationTable

from conftest import SMALL_HP


def _with_moments(em, means, sds, members=None):
    """Copy of ``em`` whose members report fixed normalised moments."""
    out = dataclasses.replace(em, members=list(members or em.members), _cache={})
    out.member_moments = lambda x: (np.asarray(means, float), np.asarray(sds, float))
    return out


def test_too_small_dataset_rejected(pairwise_data):
    train, _ = pairwise_data
    with pytest.raises(dataset.DataError):
        ensemble.train_ensemble(train.subset(np.arange(8)), SMALL_HP, k=3)
    with pytest.raises(ValueError):
        ensemble.train_ensemble(train, SMALL_HP, k=1)


@pytest.mark.parametrize("k,n,n_train,n_eval", [(3, 9, 3, 6), (2, 8, 4, 4)])
def test_fold_roles(pairwise_data, k, n, n_train, n_eval):
    train, _ = pairwise_data
    hp = dataclasses.replace(SMALL_HP, epochs=500)
    em = ensemble.train_ensemble(train.subset(np.arange(n)), hp, k=k, seed=0, predictive_samples=10)
    assert em.k == k
    folds = [m.train_index for m in em.members]
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))
    for m in em.members:
        assert len(m.train_index) == n_train and len(m.eval_index) == n_eval
        assert set(m.train_index).isdisjoint(m.eval_index)


def test_predict_aggregates_member_means(small_ensemble):
    x = np.zeros((1, len(small_ensemble.schema)))
    em = _with_moments(small_ensemble, [[50.0]] * 3, [[1.0]] * 3)
    em = dataclasses.replace(em, normalizer=dataset.Normalizer(0.0, 10.0))
    em.member_moments = lambda _: (np.array([[50.0]] * 3), np.ones((3, 1)))
    assert ensemble.ensemble_predict(em, x) == pytest.approx([5.0])
    em.member_moments = lambda _: (np.array([[40.0], [50.0], [60.0]]), np.ones((3, 1)))
    em.normalizer = dataset.Normalizer(0.0, 100.0)
    assert ensemble.ensemble_predict(em, x) == pytest.approx([50.0])


def test_interval_endpoint_averaging(small_ensemble):
    x = np.zeros((1, len(small_ensemble.schema)))
    ident = CalibrationTable.identity()
    members = [dataclasses.replace(m, calibration=ident) for m in small_ensemble.members[:2]]
    from perfbnn.bnn import z_score
    sd = 5.0 / z_score(50)
    em = _with_moments(small_ensemble, [[5.0], [15.0]], [[sd], [sd]], members)
    em.normalizer = dataset.Normalizer(0.0, 100.0)
    lo, hi = ensemble.ensemble_interval(em, x, 50)
    assert lo == pytest.approx([5.0]) and hi == pytest.approx([15.0])
    lo, hi = ensemble.ensemble_interval(em, x, 1e-9)
    assert lo == pytest.approx([10.0]) and hi == pytest.approx([10.0])


def test_identical_members_give_member_interval(small_ensemble, pairwise_data):
    _, test = pairwise_data
    one = small_ensemble.members[0]
    em = dataclasses.replace(small_ensemble, members=[one, one, one], _cache={})
    solo = dataclasses.replace(small_ensemble, members=[one], _cache={})
    for rho in (10, 50, 90):
        a = ensemble.ensemble_interval(em, test.rows, rho)
        b = ensemble.ensemble_interval(solo, test.rows, rho)
        assert np.allclose(a, b)


def test_member_permutation_invariance(small_ensemble, pairwise_data):
    _, test = pairwise_data
    x = test.rows[:20]
    perm = dataclasses.replace(small_ensemble, members=small_ensemble.members[::-1], _cache={})
    assert np.array_equal(ensemble.ensemble_predict(small_ensemble, x), ensemble.ensemble_predict(perm, x))
    for rho in (20, 95):
        a = ensemble.ensemble_interval(small_ensemble, x, rho)
        b = ensemble.ensemble_interval(perm, x, rho)
        assert np.array_equal(a, b)


def test_prediction_inside_interval_and_width_monotone(small_ensemble, pairwise_data):
    _, test = pairwise_data
    x = test.rows
    pred = ensemble.ensemble_predict(small_ensemble, x)
    rhos = np.linspace(0.5, 99.5, 120)
    widths = []
    for rho in rhos:
        for calibrated in (True, False):
            lo, hi = ensemble.ensemble_interval(small_ensemble, x, rho, calibrated)
            assert np.all(lo <= pred + 1e-9) and np.all(pred <= hi + 1e-9)
        widths.append(hi - lo)
    assert np.all(np.diff(np.array(widths), axis=0) >= -1e-9)
    with pytest.raises(ValueError):
        ensemble.ensemble_interval(small_ensemble, x, 100)


def test_serialisation_round_trip_byte_identical(small_ensemble, pairwise_data):
    _, test = pairwise_data
    text = small_ensemble.dumps()
    back = ensemble.EnsembleModel.loads(text)
    assert back.dumps() == text
    assert np.array_equal(ensemble.ensemble_predict(back, test.rows),
                          ensemble.ensemble_predict(small_ensemble, test.rows))


def test_same_seed_same_model(pairwise_data):
    train, _ = pairwise_data
    hp = dataclasses.replace(SMALL_HP, epochs=500)
    a = ensemble.train_ensemble(train, hp, seed=2, predictive_samples=20)
    b = ensemble.train_ensemble(train, hp, seed=2, predictive_samples=20)
    assert a.dumps() == b.dumps()


def test_dimension_mismatch_rejected(small_ensemble):
    with pytest.raises(dataset.DataError):
        ensemble.ensemble_predict(small_ensemble, np.zeros((2, len(small_ensemble.schema) + 1)))


def test_applies_recorded_column_drops():
    system = synthetic.pairwise_system()
    ds = system.sample(40, np.random.default_rng(1))
    rows = np.column_stack([ds.rows, ds.rows[:, 0]])
    schema = synthetic.binary_schema(rows.shape[1])
    dup = dataset.PerformanceDataset(schema, rows, ds.performance)
    em = ensemble.train_ensemble(dup, SMALL_HP, seed=0, predictive_samples=10)
    assert len(em.preprocess.dropped_columns) >= 1
    assert ensemble.ensemble_predict(em, rows[:3]).shape == (3,)
