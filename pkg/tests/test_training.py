import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qienet import model as qm
from qienet import training as qt
from qienet.errors import ConfigError, InputError, StateError, TrainingError
from qienet.pipeline.synth import synthesize


def tiny_cfg(**kw):
    return qm.variant("FC6", hidden=(3,), head_sizes=(4, 1), **kw)


@pytest.fixture(scope="module")
def split():
    ds = synthesize(60, seed=11).dataset
    return ds.subset(range(45)), ds.subset(range(45, 60))


def test_adam_matches_scalar_oracle():
    cfg = qt.TrainConfig(learning_rate=0.01)
    p = {"w": np.array([0.5, -1.0])}
    state = qt.AdamState.zeros(p)
    m = np.zeros(2)
    v = np.zeros(2)
    w = p["w"].copy()
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        g = rng.standard_normal(2)
        p, state = qt.adam_step(p, {"w": g}, state, t, cfg)
        for k in range(2):
            m[k] = 0.9 * m[k] + 0.1 * g[k]
            v[k] = 0.999 * v[k] + 0.001 * g[k] ** 2
            mh = m[k] / (1 - 0.9 ** t)
            vh = v[k] / (1 - 0.999 ** t)
            w[k] -= 0.01 * mh / (vh ** 0.5 + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-14)


def test_adam_first_step_moves_by_lr():
    cfg = qt.TrainConfig()
    p, _ = qt.adam_step({"w": np.zeros(3)}, {"w": np.array([2.0, -3.0, 0.5])},
                        qt.AdamState.zeros({"w": np.zeros(3)}), 1, cfg)
    np.testing.assert_allclose(p["w"], [-1e-3, 1e-3, -1e-3], rtol=1e-6)


def test_adam_rejects_bad_step():
    with pytest.raises(StateError):
        qt.adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, qt.AdamState.zeros({"w": np.zeros(1)}), 0,
                     qt.TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        qt.TrainConfig(patience=0)
    with pytest.raises(ConfigError):
        qt.TrainConfig(fold_count=1)


@pytest.mark.parametrize("plateau", [1, 4, 20])
def test_early_stopping_on_rigged_curve(split, plateau):
    train, val = split
    seen = {}

    def curve(epoch, params):
        seen[epoch] = {k: v.copy() for k, v in params.items()}
        return 100.0 / epoch if epoch <= plateau else 100.0 / plateau

    rep = qt.fit(tiny_cfg(), train, val, qt.TrainConfig(max_epochs=200, batch_size=16), val_mse_fn=curve)
    assert rep.best_epoch == plateau
    assert rep.stop_epoch == plateau + 15
    assert all(np.array_equal(rep.checkpoint.params[k], seen[plateau][k]) for k in seen[plateau])


def test_early_stopping_respects_max_epochs(split):
    train, val = split
    rep = qt.fit(tiny_cfg(), train, val, qt.TrainConfig(max_epochs=5, batch_size=16),
                 val_mse_fn=lambda e, p: 10.0 - e)
    assert rep.stop_epoch == 5 and rep.best_epoch == 5


def test_val_every_skips_epochs(split):
    train, val = split
    rep = qt.fit(tiny_cfg(), train, val, qt.TrainConfig(max_epochs=6, batch_size=16, val_every=2),
                 val_mse_fn=lambda e, p: 1.0 / e)
    assert rep.val_mse[0] is None and rep.val_mse[1] == 0.5 and rep.best_epoch == 6


def test_nonfinite_validation_raises(split):
    train, val = split
    with pytest.raises(TrainingError) as exc:
        qt.fit(tiny_cfg(), train, val, qt.TrainConfig(max_epochs=5, batch_size=16),
               val_mse_fn=lambda e, p: float("nan") if e == 3 else 1.0)
    assert exc.value.epoch == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_divergence_raises(split):
    train, val = split
    with pytest.raises(TrainingError):
        qt.fit(tiny_cfg(), train, val, qt.TrainConfig(max_epochs=50, batch_size=16, learning_rate=1e300))


def test_fit_is_deterministic_and_reduces_loss(split):
    train, val = split
    cfg = qt.TrainConfig(max_epochs=8, batch_size=16)
    a = qt.fit(tiny_cfg(), train, val, cfg)
    b = qt.fit(tiny_cfg(), train, val, cfg)
    assert a.train_mse == b.train_mse and a.val_mse == b.val_mse
    assert a.train_mse[-1] < a.train_mse[0]


def test_fit_requires_targets(split):
    train, val = split
    unlabeled = val.subset(range(len(val)))
    unlabeled.target[:] = np.nan
    with pytest.raises(InputError):
        qt.fit(tiny_cfg(), train, unlabeled)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 400), st.integers(2, 10), st.integers(0, 2**31))
def test_kfold_partition(n, k, seed):
    if n < k:
        with pytest.raises(InputError):
            qt.kfold_split(n, k, seed)
        return
    folds = qt.kfold_split(n, k, seed)
    vals = [v for _, v in folds]
    assert sorted(np.concatenate(vals).tolist()) == list(range(n))
    sizes = [len(v) for v in vals]
    assert max(sizes) - min(sizes) <= 1
    for tr, va in folds:
        assert not set(tr) & set(va) and len(tr) + len(va) == n
    again = qt.kfold_split(n, k, seed)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


def test_cross_validate_runs_each_fold(split):
    train, _ = split
    res = qt.cross_validate(tiny_cfg(), train, qt.TrainConfig(max_epochs=2, batch_size=16, fold_count=3))
    assert [r.k for r in res] == [1, 2, 3]
    assert sum(r.metrics.n for r in res) == len(train)
    assert len({r.seed for r in res}) == 3
