import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ssat import MakeupTransfer
from ssat.datagen.faces import ParsedImage, generate_face
from ssat.datagen.pairs import FaceBank, SyntheticPairs
from ssat.estimator import check_pairs, check_parsed
from ssat.layers import NetWidths
from ssat.network import SSATModel
from ssat.trainer import Optimizers, TrainConfig, save_training_state


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    cfg = TrainConfig.desk(widths=NetWidths(base=4, semantic=2))
    path = tmp_path_factory.mktemp("est") / "tiny.ssat"
    save_training_state(path, SSATModel(cfg.widths, seed=2), Optimizers.for_config(cfg), cfg, 0)
    return path


def test_params_and_clone():
    est = MakeupTransfer(n_iterations=3, seed=4)
    assert est.get_params()["seed"] == 4
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_not_fitted(faces):
    with pytest.raises(NotFittedError):
        MakeupTransfer().transform([faces[:2]])


def test_load_only(tiny_checkpoint, faces):
    est = MakeupTransfer(checkpoint=tiny_checkpoint, n_iterations=0).fit()
    out = est.transform([faces[:2], (faces[0], faces[2])])
    assert out.shape == (2, 3, 64, 64)
    np.testing.assert_array_equal(est.predict([faces[:2]])[0], out[0])


def test_fit_short_run_on_dataset(tmp_path, monkeypatch):
    # shrink the desk preset so two iterations stay fast
    small = TrainConfig.desk(widths=NetWidths(base=4, semantic=2), n_bare=2, n_makeup=2)
    monkeypatch.setattr(TrainConfig, "desk", classmethod(lambda cls, **kw: small))
    data = SyntheticPairs(FaceBank(2, 2, 0))
    est = MakeupTransfer(n_iterations=2, work_dir=tmp_path).fit(data)
    assert est.checkpoint_path_.exists()
    assert est.config_.total_iterations == 2
    t = generate_face(3)
    assert est.transform([(t, t)]).shape == (1, 3, 64, 64)


def test_bad_preset():
    with pytest.raises(ValueError):
        MakeupTransfer(preset="huge", n_iterations=0).fit()


def test_check_parsed(faces):
    f = faces[0]
    assert check_parsed(f, 64, 8) is f
    with pytest.raises(TypeError):
        check_parsed(f.rgb)
    with pytest.raises(ValueError):
        check_parsed(f, size=32)
    with pytest.raises(ValueError):
        check_parsed(f, n_classes=4)
    bad = np.array(f.rgb)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        check_parsed(_with(f, rgb=bad))
    with pytest.raises(ValueError):
        check_parsed(_with(f, parsing=f.parsing * 0.5))


def _with(face: ParsedImage, **kw) -> ParsedImage:
    from dataclasses import replace

    return replace(face, **kw)


def test_check_pairs(faces):
    assert len(check_pairs([faces[:2]])) == 1
    with pytest.raises(ValueError):
        check_pairs([])
    with pytest.raises(ValueError):
        check_pairs([faces])
