import json

import pytest

from staog.cli import average_precision, main
from staog.features import dump_json, read_codebook, read_features
from staog.model import Assignment, global_response, load_model

SPEC = {
    "version": 1,
    "width": 160, "height": 120, "num_frames": 48, "descriptor_dim": 6,
    "grid": {"rows": 1, "cols": 2}, "slots": 2,
    "points_per_motif": 5, "spatial_scatter": 6.0, "frame_scatter": 2,
    "clutter_points": 6,
    "motifs": {
        "m1": {"mean": [4, 0, 0, 0, 0, 0], "noise": 0.05},
        "m2": {"mean": [0, 0, 4, 0, 0, 0], "noise": 0.05},
    },
    "classes": {
        "A": {"videos": 8, "layout": [["m1", "m2"], ["m2", "m1"]], "jitter": 2},
        "B": {"videos": 8, "layout": [["m2", "m1"], ["m1", "m2"]], "jitter": 2},
    },
}

CONFIG = {
    "structure": {
        "temporal_slots": 2, "grid": {"rows": 1, "cols": 2}, "max_leaves": 3,
        "span": 7, "part_width": 60, "part_height": 50,
        "frame_width": 160, "frame_height": 120,
        "shift_steps": [2, 4], "max_hypotheses": 3,
        "search_radius": 20, "search_stride": 10,
    },
    "train": {"seed": 3, "max_iters": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synth + dict + train once; the artefacts feed every CLI test."""
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC), encoding="utf-8")
    (root / "config.json").write_text(json.dumps(CONFIG), encoding="utf-8")
    assert main(["synth", "--spec", str(root / "spec.json"), "--seed", "5",
                 "--out", str(root / "feats.jsonl")]) == 0
    assert main(["dict", "--features", str(root / "feats.jsonl"), "--k", "12",
                 "--seed", "1", "--out", str(root / "book.json")]) == 0
    assert main(["train", "--features", str(root / "feats.jsonl"),
                 "--codebook", str(root / "book.json"),
                 "--config", str(root / "config.json"),
                 "--out", str(root / "manifest.json"),
                 "--log", str(root / "train.log.jsonl")]) == 0
    return root


class TestSynth:
    def test_line_count_and_determinism(self, workspace, tmp_path):
        lines = (workspace / "feats.jsonl").read_text().strip().splitlines()
        assert len(lines) == 16
        again = tmp_path / "again.jsonl"
        assert main(["synth", "--spec", str(workspace / "spec.json"), "--seed", "5",
                     "--out", str(again)]) == 0
        assert again.read_bytes() == (workspace / "feats.jsonl").read_bytes()

    def test_missing_spec_exits_2(self, tmp_path, capsys):
        code = main(["synth", "--spec", str(tmp_path / "nope.json"), "--seed", "0",
                     "--out", str(tmp_path / "o.jsonl")])
        assert code == 2


class TestDict:
    def test_codebook_contents(self, workspace, capsys):
        book = read_codebook(workspace / "book.json")
        assert book.size == 12 and book.dim == 6

    def test_k_zero_exits_2_naming_flag(self, workspace, tmp_path, capsys):
        code = main(["dict", "--features", str(workspace / "feats.jsonl"), "--k", "0",
                     "--seed", "0", "--out", str(tmp_path / "b.json")])
        assert code == 2
        assert "--k" in capsys.readouterr().err

    def test_same_seed_identical_bytes(self, workspace, tmp_path):
        out = tmp_path / "b2.json"
        assert main(["dict", "--features", str(workspace / "feats.jsonl"), "--k", "12",
                     "--seed", "1", "--out", str(out)]) == 0
        assert out.read_bytes() == (workspace / "book.json").read_bytes()


class TestTrain:
    def test_manifest_and_models_written(self, workspace):
        manifest = json.loads((workspace / "manifest.json").read_text())
        assert sorted(manifest["classes"]) == ["A", "B"]
        for entry in manifest["classes"].values():
            assert (workspace / entry["path"]).exists()

    def test_log_energies_non_increasing_per_class(self, workspace):
        by_class: dict[str, list[float]] = {}
        for line in (workspace / "train.log.jsonl").read_text().strip().splitlines():
            record = json.loads(line)
            by_class.setdefault(record["class"], []).append(record["energy"])
        assert set(by_class) == {"A", "B"}
        for energies in by_class.values():
            assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))

    def test_rerun_reproduces_checksums(self, workspace):
        # same directory layout, so the relative codebook reference matches too
        out = workspace / "rerun-manifest.json"
        assert main(["train", "--features", str(workspace / "feats.jsonl"),
                     "--codebook", str(workspace / "book.json"),
                     "--config", str(workspace / "config.json"),
                     "--out", str(out)]) == 0
        first = json.loads((workspace / "manifest.json").read_text())
        second = json.loads(out.read_text())
        for cls in first["classes"]:
            assert first["classes"][cls]["sha256"] == second["classes"][cls]["sha256"]

    def test_unlabeled_features_exit_2(self, workspace, tmp_path):
        videos = read_features(workspace / "feats.jsonl")
        lines = []
        for video in videos:
            from staog.features import video_payload

            payload = video_payload(video)
            payload["label"] = None
            lines.append(dump_json(payload))
        bad = tmp_path / "unlabeled.jsonl"
        bad.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        code = main(["train", "--features", str(bad),
                     "--codebook", str(workspace / "book.json"),
                     "--out", str(tmp_path / "m.json")])
        assert code == 2


class TestPredict:
    def run_predict(self, workspace, tmp_path, name="scores.jsonl"):
        out = tmp_path / name
        assert main(["predict", "--models", str(workspace / "manifest.json"),
                     "--features", str(workspace / "feats.jsonl"),
                     "--out", str(out)]) == 0
        return out

    def test_training_positives_mostly_correct(self, workspace, tmp_path):
        out = self.run_predict(workspace, tmp_path)
        label_of = {v.id: v.label for v in read_features(workspace / "feats.jsonl")}
        records = [json.loads(line) for line in out.read_text().strip().splitlines()]
        assert len(records) == 16
        correct = sum(1 for r in records if r["predicted"] == label_of[r["id"]])
        assert correct / len(records) >= 0.95

    def test_single_class_manifest_always_predicts_it(self, workspace, tmp_path):
        manifest = json.loads((workspace / "manifest.json").read_text())
        manifest["classes"] = {"A": manifest["classes"]["A"]}
        solo = workspace / "solo.json"
        solo.write_text(dump_json(manifest) + "\n", encoding="utf-8")
        out = tmp_path / "solo_scores.jsonl"
        assert main(["predict", "--models", str(solo),
                     "--features", str(workspace / "feats.jsonl"),
                     "--out", str(out)]) == 0
        for line in out.read_text().strip().splitlines():
            assert json.loads(line)["predicted"] == "A"

    def test_emitted_assignment_rescopes_to_emitted_score(self, workspace, tmp_path):
        out = self.run_predict(workspace, tmp_path, "rescore.jsonl")
        manifest = json.loads((workspace / "manifest.json").read_text())
        videos = {v.id: v for v in read_features(workspace / "feats.jsonl")}
        models = {}
        for cls, entry in manifest["classes"].items():
            path = workspace / entry["path"]
            payload = json.loads(path.read_text())
            book = read_codebook(workspace / payload["codebook_ref"])
            models[cls] = load_model(path, book)
        for line in out.read_text().strip().splitlines():
            record = json.loads(line)
            win = record["assignment"]
            assignment = Assignment(
                shifts=tuple(win["shifts"]),
                anchor_frames=tuple(win["anchor_frames"]),
                active=tuple(win["active"]),
                positions=tuple((p[0], p[1]) for p in win["positions"]),
            )
            model = models[win["class"]]
            recomputed = global_response(model, videos[record["id"]], assignment)
            assert recomputed == pytest.approx(record["scores"][win["class"]], abs=1e-9)

    def test_thread_env_does_not_change_output(self, workspace, tmp_path, monkeypatch):
        serial = self.run_predict(workspace, tmp_path, "serial.jsonl")
        monkeypatch.setenv("STAOG_THREADS", "3")
        threaded = self.run_predict(workspace, tmp_path, "threaded.jsonl")
        assert serial.read_bytes() == threaded.read_bytes()

    def test_malformed_manifest_exits_2(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": 1, "classes": {"A": {}}}', encoding="utf-8")
        code = main(["predict", "--models", str(bad),
                     "--features", str(workspace / "feats.jsonl"),
                     "--out", str(tmp_path / "o.jsonl")])
        assert code == 2


class TestEval:
    def test_average_precision_hand_cases(self):
        assert average_precision([True, True, False, False]) == pytest.approx(1.0)
        assert average_precision([False, True, False, True]) == pytest.approx(0.5)
        assert average_precision([False, False]) is None

    def eval_output(self, tmp_path, labeled, scores, capsys):
        feats = tmp_path / "f.jsonl"
        lines = []
        for vid, label in labeled:
            lines.append(dump_json({
                "id": vid, "label": label, "width": 10, "height": 10,
                "num_frames": 2, "descriptor_dim": 1, "points": [],
            }))
        feats.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        score_path = tmp_path / "s.jsonl"
        score_path.write_text(
            "".join(dump_json(r) + "\n" for r in scores), encoding="utf-8"
        )
        assert main(["eval", "--scores", str(score_path), "--features", str(feats)]) == 0
        return capsys.readouterr().out

    def test_all_correct_accuracy_one(self, workspace, tmp_path, capsys):
        labeled = [("a1", "pos"), ("a2", "pos"), ("b1", "neg"), ("b2", "neg")]
        scores = [
            {"id": vid, "scores": {"pos": 1.0 if lbl == "pos" else -1.0,
                                   "neg": -1.0 if lbl == "pos" else 1.0},
             "predicted": lbl}
            for vid, lbl in labeled
        ]
        out = self.eval_output(tmp_path, labeled, scores, capsys)
        for line in out.splitlines():
            cols = line.split()
            if cols and cols[0] in ("pos", "neg", "mean"):
                assert cols[2] == "1.0000"

    def test_ap_ranking_hand_cases(self, tmp_path, capsys):
        # positives at ranks 2 and 4 of the "pos" ranking -> AP 0.5
        labeled = [("v1", "neg"), ("v2", "pos"), ("v3", "neg"), ("v4", "pos")]
        ranks = {"v1": 4.0, "v2": 3.0, "v3": 2.0, "v4": 1.0}
        scores = [
            {"id": vid, "scores": {"pos": ranks[vid], "neg": 0.0}, "predicted": "neg"}
            for vid, _ in labeled
        ]
        out = self.eval_output(tmp_path, labeled, scores, capsys)
        pos_line = [line for line in out.splitlines() if line.startswith("pos")][0]
        assert pos_line.split()[-1] == "0.5000"

    def test_score_id_missing_from_features_exit_2(self, tmp_path, capsys):
        feats = tmp_path / "f.jsonl"
        feats.write_text(dump_json({
            "id": "known", "label": "x", "width": 4, "height": 4,
            "num_frames": 1, "descriptor_dim": 1, "points": [],
        }) + "\n", encoding="utf-8")
        score_path = tmp_path / "s.jsonl"
        score_path.write_text(dump_json(
            {"id": "unknown", "scores": {"x": 1.0}, "predicted": "x"}) + "\n",
            encoding="utf-8")
        assert main(["eval", "--scores", str(score_path), "--features", str(feats)]) == 2
