import numpy as np
import pytest

from oskit.config import load_config
from oskit.data import read_feature_table
from oskit.errors import ConfigError, DataError
from oskit.nets import load_checkpoint
from oskit.pipeline import (
    KNOWN_CLASSES,
    evaluate_tier,
    extract_tables,
    fit_detector_suite,
    history_csv,
    load_role,
    load_stats,
    prepare_desk_data,
    resolve_root,
    save_trained,
    stage,
    train_regime,
    write_extraction,
)


def _cfg(tmp_path, glyph_root, extra=""):
    p = tmp_path / "run.cfg"
    p.write_text(
        f"[data]\nroot = {glyph_root}\nbackground = letters\n"
        "[train]\nregime = cross_entropy\n" + extra
    )
    return load_config(p)


# --------------------------------------------------------------- loading


def test_resolve_root_error_paths(tmp_path, monkeypatch):
    monkeypatch.delenv("OSKIT_DATA_DIR", raising=False)
    with pytest.raises(ConfigError, match="OSKIT_DATA_DIR"):
        resolve_root("")
    with pytest.raises(DataError, match="not a directory"):
        resolve_root(str(tmp_path / "nowhere"))
    monkeypatch.setenv("OSKIT_DATA_DIR", str(tmp_path))
    assert resolve_root("") == tmp_path


def test_load_role_names_the_missing_piece(tmp_path):
    with pytest.raises(DataError, match="role 'mnist' split 'train'"):
        load_role(tmp_path, "mnist", "train")


def test_stage_prefixes_toolkit_errors():
    with pytest.raises(DataError, match="stage demo: boom"):
        with stage("demo"):
            raise DataError("boom")
    # non-toolkit errors pass through untouched
    with pytest.raises(KeyError):
        with stage("demo"):
            raise KeyError("boom")


# -------------------------------------------------------------- splitting


def test_prepare_desk_data_split(tmp_path, glyph_root):
    data = prepare_desk_data(_cfg(tmp_path, glyph_root), with_background=False)
    k = len(KNOWN_CLASSES)
    assert data.num_classes == k
    assert set(np.unique(data.y_train)) == set(range(k))
    assert set(np.unique(data.y_test)) == set(range(k))
    # balanced corpus: half the classes keep half the rows
    assert data.x_train.shape[0] == 150
    assert data.x_test.shape[0] == 80
    assert data.x_intra.shape[0] == 80
    assert data.x_inter.shape[0] == 160
    assert data.x_background is None
    # standardized on known train rows only
    assert abs(float(data.x_train.mean())) < 1e-6
    assert float(data.x_train.std()) == pytest.approx(1.0, abs=1e-3)
    assert data.x_train.shape[1:] == (1, 28, 28)


def test_prepare_desk_data_background_and_subsample(tmp_path, glyph_root):
    cfg = _cfg(tmp_path, glyph_root, "train_n = 50\nbackground_n = 40\n")
    data = prepare_desk_data(cfg, with_background=True, seed=3)
    assert data.x_train.shape[0] == 50
    assert np.bincount(data.y_train, minlength=5).tolist() == [10] * 5
    assert data.x_background.shape[0] == 40
    # same seed reproduces the same subsample
    again = prepare_desk_data(cfg, with_background=True, seed=3)
    np.testing.assert_array_equal(data.x_train, again.x_train)
    np.testing.assert_array_equal(data.x_background, again.x_background)
    other = prepare_desk_data(cfg, with_background=True, seed=4)
    assert not np.array_equal(data.x_train, other.x_train)


def test_missing_role_is_reported_with_stage(tmp_path, glyph_root):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text(
        f"[data]\nroot = {glyph_root}\ndataset = cifar\n[train]\nregime = cross_entropy\n"
    )
    cfg = load_config(cfg_path)
    with pytest.raises(DataError, match="stage load-data: missing IDX files for role 'cifar'"):
        prepare_desk_data(cfg, with_background=False)


# ------------------------------------------------------- train and persist


@pytest.fixture(scope="module")
def trained(tmp_path_factory, glyph_root):
    tmp_path = tmp_path_factory.mktemp("trained")
    cfg = _cfg(
        tmp_path,
        glyph_root,
        "epochs = 8\ntrain_n = 150\nwidths = 4,8\nbatch = 32\n",
    )
    data = prepare_desk_data(cfg, with_background=False, seed=0)
    net, history = train_regime(cfg, data, seed=0)
    return cfg, data, net, history


def test_train_regime_learns_something(trained):
    _, data, net, history = trained
    assert len(history) == 8
    assert history[-1]["val_top1"] > 0.5  # tiny corpus, tiny net: just sane
    assert history[0]["loss"] > history[-1]["loss"]


def test_history_csv_shape(trained):
    *_, history = trained
    text = history_csv(history)
    lines = text.strip().splitlines()
    assert lines[0] == "epoch,lr,loss,top1"
    assert len(lines) == 9
    assert lines[1].startswith("0,0.004,")


def test_save_trained_round_trip(tmp_path, trained):
    _, data, net, _ = trained
    path = tmp_path / "run.osknet"
    save_trained(path, net, data)
    again = load_checkpoint(path)
    mean, std = load_stats(path)
    assert mean == pytest.approx(data.mean)
    assert std == pytest.approx(data.std)
    x = data.x_test[:8]
    f0, z0 = extract_tables(net, x)
    f1, z1 = extract_tables(again, x)
    np.testing.assert_allclose(z0.values, z1.values, atol=1e-6)


def test_load_stats_missing(tmp_path):
    with pytest.raises(DataError, match="sidecar"):
        load_stats(tmp_path / "nothing.osknet")


def test_write_extraction_is_reproducible(tmp_path, trained):
    _, data, net, _ = trained
    x, y = data.x_test[:16], data.y_test[:16]
    fpath, lpath = write_extraction(tmp_path / "run", net, x, y)
    assert fpath.name == "run.features.oodf"
    assert lpath.name == "run.logits.oodf"
    t = read_feature_table(fpath)
    assert t.values.shape == (16, 2)
    np.testing.assert_array_equal(t.labels, y)
    first = fpath.read_bytes()
    write_extraction(tmp_path / "run", net, x, y)
    assert fpath.read_bytes() == first


# ------------------------------------------------------------ evaluation


@pytest.fixture(scope="module")
def suite(trained):
    cfg, data, net, _ = trained
    methods = ("tau-softmax", "mahalanobis", "openmax")
    return data, net, fit_detector_suite(
        methods,
        net=net,
        data=data,
        seed=0,
        params_by_method={"openmax": {"tail": 5, "alpha": 2}},
    )


def test_fit_detector_suite_families(suite):
    _, _, detectors = suite
    assert set(detectors) == {"tau-softmax", "mahalanobis", "openmax"}
    for det in detectors.values():
        assert np.isfinite(det.delta)


def test_fit_detector_suite_rejects_unknown_method(trained):
    cfg, data, net, _ = trained
    with pytest.raises(ConfigError, match="stage fit-detectors: unknown detector method"):
        fit_detector_suite(("knn",), net=net, data=data, seed=0)


def test_evaluate_tier_shapes_and_determinism(suite):
    data, net, detectors = suite
    a = evaluate_tier(detectors, net, data, "inter", runs=2, seed=5, n_each=30)
    b = evaluate_tier(detectors, net, data, "inter", runs=2, seed=5, n_each=30)
    for method in detectors:
        assert len(a[method]) == 2
        for s1, s2 in zip(a[method], b[method]):
            np.testing.assert_array_equal(s1.in_scores, s2.in_scores)
            np.testing.assert_array_equal(s1.out_scores, s2.out_scores)
            assert s1.in_scores.shape == (30,)
            assert s1.out_scores.shape == (30,)
        # separate runs draw different sets
        assert not np.array_equal(a[method][0].in_scores, a[method][1].in_scores)
    c = evaluate_tier(detectors, net, data, "inter", runs=1, seed=6, n_each=30)
    for method in detectors:
        assert not np.array_equal(a[method][0].in_scores, c[method][0].in_scores)


def test_evaluate_tier_noise_and_intra(suite):
    data, net, detectors = suite
    for tier in ("noise", "intra"):
        res = evaluate_tier(detectors, net, data, tier, runs=1, seed=0, n_each=20)
        for sets in res.values():
            assert sets[0].in_scores.shape == (20,)
            assert sets[0].out_scores.shape == (20,)


def test_evaluate_tier_rejects_bad_args(suite):
    data, net, detectors = suite
    with pytest.raises(ConfigError, match="stage evaluate-warp: unknown tier"):
        evaluate_tier(detectors, net, data, "warp", runs=1, seed=0, n_each=5)
    with pytest.raises(ConfigError, match="runs must be >= 1"):
        evaluate_tier(detectors, net, data, "noise", runs=0, seed=0, n_each=5)
