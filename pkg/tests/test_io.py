import csv
import json

import numpy as np
import pytest

from cmposterior import io
from cmposterior.comparison import Rope, compare
from cmposterior.core import ConfigError, DirichletPrior, EvaluationInput, GroupConfusionMatrix, JointSampleMatrix
from cmposterior.hdr import fit_hdr
from cmposterior.posterior import marginal_summary


def write(path, text):
    path.write_text(text)
    return path


def test_predictions_counted_per_group(tmp_path):
    p = write(tmp_path / "p.csv", "y_true,y_pred,group\n1,1,m\n1,0,m\n0,0,f\n0,1,f\n1,1,f\n0,0,m\n")
    data = io.load_predictions(p)
    assert data.source == "holdout" and data.group_ids == ("m", "f")
    m, f = data.folds[0]
    assert m.as_array().tolist() == [1, 1, 0, 1]
    assert f.as_array().tolist() == [1, 1, 1, 0]


def test_custom_labels_and_reference(tmp_path):
    p = write(tmp_path / "p.csv", "y_true,y_pred,group\nyes,no,a\nno,no,b\n")
    cfg = io.Config.from_dict({"labels": {"positive": "yes", "negative": "no"}, "reference_group": "b"})
    data = io.load_predictions(p, cfg)
    assert data.group_ids == ("b", "a")
    assert data.folds[0][1].fn == 1
    with pytest.raises(io.UnknownLabelError):
        io.load_predictions(p)


def test_group_absent_from_fold_gives_zero_matrix(tmp_path):
    p = write(tmp_path / "p.csv", "y_true,y_pred,group,fold\n1,1,a,0\n0,0,b,0\n1,0,a,1\n")
    data = io.load_predictions(p)
    assert data.k == 2
    assert data.folds[1][1].total() == 0


def test_confusion_matrix_file(tmp_path):
    p = write(tmp_path / "cm.csv", "fold,group,tp,tn,fp,fn\n0,a,1,2,3,4\n0,b,1,1,1,1\n1,a,2.5,0,0,1\n1,b,0,0,0,3\n")
    data = io.load_evaluation(p)
    assert data.source == "kfold" and data.k == 2
    assert data.folds[1][0].tp == 2.5


@pytest.mark.parametrize("text,exc", [
    ("group,tp,tn,fp\na,1,1,1\n", io.MissingColumnError),
    ("group,tp,tn,fp,fn\na,1,-1,1,1\n", io.NegativeCellError),
    ("group,tp,tn,fp,fn\na,1,1,1,1\na,1,1,1,1\n", io.DuplicateEntryError),
    ("fold,group,tp,tn,fp,fn\n0,a,1,1,1,1\n2,a,1,1,1,1\n", io.FoldIndexError),
    ("fold,group,tp,tn,fp,fn\nx,a,1,1,1,1\n", io.FoldIndexError),
    ("group,tp,tn,fp,fn\n", io.EmptyFileError),
    ("", io.EmptyFileError),
    ("y_true,y_pred,group\n1,2,a\n", io.UnknownLabelError),
])
def test_malformed_inputs(tmp_path, text, exc):
    p = write(tmp_path / "bad.csv", text)
    with pytest.raises(exc):
        io.load_evaluation(p)


def test_missing_column_is_named(tmp_path):
    p = write(tmp_path / "bad.csv", "y_true,y_pred,grp\n1,1,a\n")
    with pytest.raises(io.MissingColumnError, match="'group'") as info:
        io.load_evaluation(p)
    assert info.value.column == "group"


def test_config(tmp_path):
    p = write(tmp_path / "c.json", json.dumps({
        "T": 500, "seed": 3, "metrics": "accuracy,dp", "rope": [0.02, 0.03],
        "prior": {"a": [0.5, 0.5, 0.5, 0.5]},
    }))
    cfg = io.load_config(p)
    assert cfg.metrics == ("accuracy", "dp") and cfg.T == 500
    assert cfg.rope_for(2).eps.tolist() == [0.02, 0.03]
    assert cfg.priors()["a"] == DirichletPrior((0.5,) * 4)
    assert cfg.replace(T=None, seed=9).seed == 9 and cfg.replace(T=None).T == 500
    with pytest.raises(ConfigError):
        cfg.rope_for(3)
    with pytest.raises(ConfigError):
        io.Config.from_dict({"nonsense": 1})
    with pytest.raises(ConfigError):
        io.load_config(write(tmp_path / "x.json", "{not json"))
    assert io.Config().rope_for(2) == Rope.square(2, 0.01)


def test_fmt():
    assert io.fmt(0.1) == "0.1"
    assert io.fmt(1 / 3) == "0.333333333333"
    assert io.fmt(float("nan")) == "nan"
    assert io.fmt(-0.0) == "0"


def test_evaluation_round_trip(tmp_path):
    folds = tuple((GroupConfusionMatrix("a", k + 0.5, 2, 3, 4), GroupConfusionMatrix("b", 1, k, 0, 2))
                  for k in range(3))
    data = EvaluationInput(folds, "kfold")
    path = tmp_path / "cm.csv"
    io.export_report(data, path)
    assert io.load_confusion_matrices(path) == data


def test_samples_round_trip_at_12_digits(tmp_path):
    x = np.random.default_rng(0).random((50, 2))
    x[3, 1] = np.nan
    s = JointSampleMatrix(("accuracy", "eop"), x)
    path = tmp_path / "s.csv"
    io.export_report(s, path)
    back = io.load_samples(path)
    assert back.columns == s.columns
    np.testing.assert_allclose(back.samples, x, rtol=1e-11, equal_nan=True)
    assert back.n_flagged == 1
    # re-export is byte-identical
    io.export_report(back, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_bytes() == path.read_bytes()
    assert io.is_sample_file(path)


def test_report_exports(tmp_path):
    rng = np.random.default_rng(1)
    gap = JointSampleMatrix(("accuracy", "eop"), rng.normal(0, 0.02, (1000, 2)))
    rep = compare(gap, Rope.square(2))
    io.export_report(rep, tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["p_equivalent"] == rep.p_equivalent
    io.export_report(rep, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["event", "pattern", "probability"]
    assert sum(float(r[2]) for r in rows[1:] if r[0] in ("equivalent", "orthant")) == pytest.approx(1.0)

    region = fit_hdr(gap)
    io.export_report(region, tmp_path / "mask.csv")
    mask = np.loadtxt(tmp_path / "mask.csv", delimiter=",")
    assert mask.shape == (256, 256)
    np.testing.assert_array_equal(mask, region.mask)

    summary = marginal_summary(gap, "accuracy")
    io.export_report([summary], tmp_path / "m.csv")
    io.export_report(summary, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())[0]["metric"] == "accuracy"


def test_json_nan_becomes_null(tmp_path):
    io.write_json({"x": float("nan"), "y": [1.0, float("inf")]}, tmp_path / "a.json")
    assert json.loads((tmp_path / "a.json").read_text()) == {"x": None, "y": [1.0, None]}


def test_failed_export_leaves_nothing(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(io.ExportError):
        io.export_report(object(), target)
    with pytest.raises(io.ExportError):
        io.export_report({"a": 1}, tmp_path / "x.txt")
    assert list(tmp_path.iterdir()) == []
