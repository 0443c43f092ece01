import numpy as np
import pytest

from skyreg import evaluation, network, synthetic
from skyreg.errors import DataError, MissingPrediction
from skyreg.evaluation import LandmarkAnnotation


def test_propagation_of_pan():
    hs = np.tile(np.array([[1, 0, 1.0], [0, 1, 0], [0, 0, 1]]), (30, 1, 1))
    out = evaluation.propagate_landmarks([[100.0, 200.0]], hs)
    np.testing.assert_allclose(out, [[220.0, 200.0]], atol=1e-9)


def test_mace_aggregates_over_intervals():
    ann = {"a": LandmarkAnnotation("a", [(0, {1: (0, 0)}), (30, {1: (0, 0)}), (60, {1: (0, 0)})]),
           "b": LandmarkAnnotation("b", [(0, {1: (0, 0)}), (30, {1: (0, 0), 2: (5, 5)})])}
    preds = {"a": {30: {1: (3.0, 4.0)}, 60: {1: (0.0, 1.0)}}, "b": {30: {1: (0.0, 2.0)}}}
    res = evaluation.compute_mace(preds, ann)
    assert res.overall == pytest.approx((5 + 1 + 2) / 3)
    assert dict(res.per_video) == {"a": pytest.approx(3.0), "b": pytest.approx(2.0)}
    with pytest.raises(MissingPrediction):
        evaluation.compute_mace({"a": {30: {1: (0, 0)}}}, ann)


def test_annotation_validation(tmp_path):
    bad = LandmarkAnnotation("x", [(0, {1: (0, 0)}), (20, {1: (0, 0)})])
    with pytest.raises(DataError):
        bad.validate()
    disjoint = LandmarkAnnotation("x", [(0, {1: (0, 0)}), (30, {2: (0, 0)})])
    with pytest.raises(DataError):
        disjoint.validate()
    with pytest.raises(DataError):
        evaluation.read_annotations(tmp_path / "missing.csv")
    (tmp_path / "h.csv").write_text("a,b\n")
    with pytest.raises(DataError):
        evaluation.read_annotations(tmp_path / "h.csv")


def test_annotation_csv_round_trip(tmp_path):
    ann = LandmarkAnnotation("v", [(0, {1: (1.5, 2.0), 2: (3.0, 4.0)}), (30, {1: (5.0, 6.25)})])
    evaluation.write_annotations(tmp_path / "a.csv", [ann])
    back = evaluation.read_annotations(tmp_path / "a.csv")["v"]
    assert back.entries == ann.entries


def test_true_homographies_give_zero():
    clip = synthetic.generate(synthetic.SyntheticSpec(
        motion=(synthetic.MotionStep(0.7, -0.3, 0.2, 1.002),), length=61, seed=2))
    preds = {clip.annotation.video_id: evaluation.predict_annotation(clip.annotation,
                                                                     clip.homographies)}
    res = evaluation.compute_mace(preds, {clip.annotation.video_id: clip.annotation})
    assert res.overall < 1e-6


def test_model_estimator_shapes(pan_clip):
    model = network.init_params(network.ModelConfig(variant="LSTM", width_divisor=8,
                                                    hidden_dim=16), 0)
    hs = evaluation.ModelEstimator(model, episode_len=8).estimate_sequence(pan_clip.sequence)
    assert hs.shape == (31, 3, 3)
    assert np.allclose(hs[:, 2, 2], 1.0)


def test_mace_csv(tmp_path):
    res = evaluation.MaceResult([("a", 1.5)], 1.5, {"a": 3})
    evaluation.write_mace_csv(res, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "video_id,mace,annotated_frames" and lines[-1].startswith("OVERALL,1.5,3")
