import io
import json

import pytest

from boxforge.cli import main

import pipeline

DET = {"image_id": "a", "class": "vehicle", "x1": 0, "y1": 0, "x2": 10, "y2": 10}


def cli(argv, stdin=""):
    out = io.StringIO()
    code = main(argv, stdin=io.StringIO(stdin), stdout=out)
    return code, out.getvalue()


def lines(*objs):
    return "".join(json.dumps(o) + "\n" for o in objs)


def test_filter_example():
    src = lines(*({**DET, "score": s} for s in (0.9, 0.02, 0.03)))
    code, out = cli(["filter", "--floor", "0.03"], src)
    assert code == 0
    assert [json.loads(l)["score"] for l in out.splitlines()] == [0.9, 0.03]


def test_output_order_is_image_then_score():
    src = lines({**DET, "image_id": "b", "score": 0.9}, {**DET, "score": 0.1}, {**DET, "score": 0.5, "x1": 5})
    _, out = cli(["filter"], src)
    assert [(json.loads(l)["image_id"], json.loads(l)["score"]) for l in out.splitlines()] == [("a", 0.5), ("a", 0.1), ("b", 0.9)]


def test_bad_line_reports_line_number(capsys):
    code, _ = cli(["nms"], lines({**DET, "score": 0.5}) + '{"image_id": "a"}\n')
    assert code == 1
    assert "<stdin>:2:" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert cli([])[0] == 1
    assert cli(["nms", "--bogus"])[0] == 1
    assert cli(["crop-plan"])[0] == 1  # --seed is mandatory
    assert cli(["sample-plan", "--seed", "1", "--ratio", "cyclist"])[0] == 1


def test_missing_file_exits_2():
    assert cli(["nms", "--in", "/nonexistent/x.jsonl"])[0] == 2


def test_invalid_config_exits_1(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"suppression": {"nms_iou": {"vehicle": 2}}}')
    assert cli(["nms", "--config", str(p)], "")[0] == 1


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("BOXFORGE_THREADS", "many")
    assert cli(["nms"], lines({**DET, "score": 0.5}, {**DET, "image_id": "b", "score": 0.5}))[0] == 1


def test_ensemble_single_run_equals_nms_then_vote(tmp_path):
    src = tmp_path / "m.jsonl"
    src.write_text((pipeline.FIXTURE / "m2_s1280.jsonl").read_text())
    code, ens = cli(["ensemble", "--run", "m2", str(src)])
    assert code == 0
    _, kept = cli(["nms", "--in", str(src)])
    (tmp_path / "k.jsonl").write_text(kept)
    _, voted = cli(["vote", "--in", str(tmp_path / "k.jsonl"), "--pool", str(src)])
    strip = lambda text: [{k: v for k, v in json.loads(l).items() if k != "model_id"} for l in text.splitlines()]
    assert strip(ens) == strip(voted)


def test_ensemble_needs_aps_for_several_runs(tmp_path):
    src = tmp_path / "m.jsonl"
    src.write_text(lines({**DET, "score": 0.5}))
    assert cli(["ensemble", "--run", "a", str(src), "--run", "b", str(src)])[0] == 1


def test_golden_pipeline(tmp_path, backend):
    assert pipeline.run(tmp_path) == pipeline.golden()


def test_pipeline_deterministic(tmp_path):
    assert pipeline.run(tmp_path / "a") == pipeline.run(tmp_path / "b")


def test_soft_nms_and_decay_and_flip(tmp_path):
    src = lines({**DET, "score": 0.9}, {**DET, "score": 0.8})
    _, out = cli(["soft-nms"], src)
    assert len(out.splitlines()) == 1
    _, out = cli(["soft-nms", "--mode", "gaussian"], src)
    assert len(out.splitlines()) == 2
    _, out = cli(["decay"], lines({**DET, "score": 0.8, "scale_tag": "s1280"}))
    assert json.loads(out)["score"] == 0.48
    (tmp_path / "f.jsonl").write_text(lines({**DET, "score": 0.7}))
    _, out = cli(["fuse-flip", "--flipped", str(tmp_path / "f.jsonl"), "--width", "100", "--height", "50"], lines({**DET, "score": 0.9}))
    assert [json.loads(l)["x1"] for l in out.splitlines()] == [0, 90.0]


def test_calibrate_cli():
    _, out = cli(["calibrate"], lines({**DET, "score": 0.9}))
    assert json.loads(out)["score"] == pytest.approx(0.75, abs=1e-12)


def test_eval_cli(tmp_path):
    gt = tmp_path / "gt.jsonl"
    gt.write_text(lines({**DET, "difficulty": 1}))
    table = tmp_path / "t.txt"
    code, out = cli(["eval", "--gt", str(gt), "--table", str(table), "--mode", "exact"], lines({**DET, "score": 0.9}))
    assert code == 0
    rep = json.loads(out)
    assert rep["ap"]["vehicle"] == 1.0 and rep["ap_mode"] == "exact"
    assert "Vehicle" in table.read_text()


def test_analysis_commands(tmp_path):
    box = {"x1": 0, "y1": 0, "x2": 32, "y2": 32}
    csv = tmp_path / "s.csv"
    code, out = cli(["analyze-scales", "--width", "600", "--height", "400", "--csv", str(csv)], lines(box))
    assert code == 0 and json.loads(out)["small_fraction"] == 0.0
    assert csv.read_text().startswith("bin_low,bin_high,fraction\n")
    _, out = cli(["assign-level"], lines({"x1": 0, "y1": 0, "x2": 76, "y2": 76}))
    assert json.loads(out)["level"] == 4
    _, out = cli(["gen-anchors", "--level", "P2", "--feature-width", "1", "--feature-height", "1", "--ratios", "1"])
    assert json.loads(out) == {"level": "P2", "x1": -4.0, "y1": -4.0, "x2": 8.0, "y2": 8.0}


def test_planning_commands_are_deterministic():
    recs = lines(
        {"image_id": "a", "width": 1920, "height": 1280, "annotations": [{"class": "cyclist", "x1": 0, "y1": 0, "x2": 50, "y2": 80}]},
        {"image_id": "b", "width": 1920, "height": 1280, "annotations": [{"class": "pedestrian", "x1": 9, "y1": 9, "x2": 50, "y2": 80}]},
        {"image_id": "c", "width": 1920, "height": 1280, "annotations": [{"class": "vehicle", "x1": 9, "y1": 9, "x2": 50, "y2": 80}]},
        {"image_id": "d", "width": 1920, "height": 1280},
    )
    a = cli(["crop-plan", "--seed", "3"], recs)
    assert a == cli(["crop-plan", "--seed", "3"], recs) and a[0] == 0
    b = cli(["sample-plan", "--seed", "3", "--images-per-epoch", "33"], recs)
    assert b == cli(["sample-plan", "--seed", "3", "--images-per-epoch", "33"], recs)
    assert len(b[1].splitlines()) == 33
    _, out = cli(["lr-schedule", "--every", "5000"])
    assert [json.loads(l)["iteration"] for l in out.splitlines()] == [0, 5000, 10000]


def test_coco_commands(tmp_path):
    code, out = cli(["coco", "export"], lines({**DET, "score": 0.5}))
    assert code == 0 and json.loads(out)[0]["bbox"] == [0, 0, 10, 10]
    code, back = cli(["coco", "import"], out)
    assert code == 0 and json.loads(back)["x2"] == 10.0
    assert cli(["coco", "import"], "[{}]")[0] == 1


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "kernels" in capsys.readouterr().out
