import hashlib

import numpy as np
import pytest

import tsaug

TINY = {
    "kfold": 3,
    "seed": 4,
    "forecaster": {"epochs": 1, "hidden": 4},
    "predictor": {"models": ["talstm"], "epochs": 1, "lstm_layers": 1, "lstm_hidden": 4, "attention_dim": 4},
}


@pytest.fixture(scope="module")
def cohort():
    return tsaug.gen_synthetic(subjects=12, channels=2, length=30, tr_seconds=2.0, seed=3)


@pytest.fixture(scope="module")
def forecaster(cohort):
    model, log = tsaug.train_forecaster(cohort, "recursive", TINY)
    assert len(log) == 1
    return model


def test_records(cohort):
    assert len(cohort) == 12
    r = cohort[0]
    assert r.series.shape == (2, 30)
    assert r.channels == 2 and r.length == 30
    copy = tsaug.Record(r.subject_id, r.age, r.tr_seconds, r.series)
    assert np.array_equal(copy.series, r.series)


def test_tsds_matches_cli_bytes(tmp_path, cohort):
    path = tmp_path / "a.tsds"
    tsaug.save_tsds(cohort, path)
    data = path.read_bytes()
    assert data[:4] == b"TSDS"
    back = tsaug.load_tsds(path)
    assert [r.subject_id for r in back] == [r.subject_id for r in cohort]
    again = tmp_path / "b.tsds"
    tsaug.save_tsds(tsaug.gen_synthetic(subjects=12, channels=2, length=30, tr_seconds=2.0, seed=3), again)
    assert hashlib.sha256(again.read_bytes()).digest() == hashlib.sha256(data).digest()


def test_bad_file_raises_format_error(tmp_path):
    p = tmp_path / "junk.tsds"
    p.write_bytes(b"TSDSjunk")
    with pytest.raises(tsaug.FormatError):
        tsaug.load_tsds(p)


def test_forecast_and_augment(tmp_path, cohort, forecaster):
    assert forecaster.mode == "recursive"
    window = np.zeros((forecaster.input_length, forecaster.channels))
    out = forecaster.forecast(window, 5)
    assert out.shape == (5, 2)
    ext = tsaug.augment(cohort, forecaster, 10)
    assert ext[0].length == 40
    assert np.array_equal(ext[0].series[:, :30], cohort[0].series)
    ckpt = tmp_path / "rec.tsaf"
    forecaster.save(ckpt)
    assert ckpt.read_bytes()[8] == 1
    back = tsaug.load_forecaster(ckpt)
    assert np.array_equal(back.forecast(window, 3), forecaster.forecast(window, 3))


def test_evaluate_and_sweep(cohort, forecaster):
    ext = tsaug.augment(cohort, forecaster, 4)
    report = tsaug.evaluate(cohort, ext, TINY)
    assert len(report["folds"]) == 6
    assert {row["dataset"] for row in report["aggregate"]} == {"baseline", "augmented"}
    swept = tsaug.sweep(cohort, forecaster, [4, 8], TINY)
    assert [row["step"] for row in swept["aggregate"]] == [0, 4, 8]


def test_config_errors():
    with pytest.raises(ValueError, match="predictor.dropout"):
        tsaug.evaluate([], [], {"predictor": {"dropout": 0.1}})
    assert tsaug.default_config()["kfold"] == 10
