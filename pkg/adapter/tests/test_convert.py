import json

import pytest

from extractor_adapter import ColumnMap, FormatError, VideoMeta, convert
from extractor_adapter.cli import main

MAPPING = ColumnMap(frame=2, x=1, y=0, descriptor_start=5)
META = VideoMeta(id="clip-7", label="jump", width=320, height=240, num_frames=90)


def write_dump(path, rows, header=True):
    lines = []
    if header:
        lines.append("# point-type y x t sigma2 tau2 descriptor...")
    for row in rows:
        lines.append(" ".join(str(v) for v in row))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def dump_row(frame, x, y, desc):
    # layout: y x t sigma2 tau2 d0 d1 ...  (columns per MAPPING)
    return [y, x, frame, 4.0, 2.0, *desc]


class TestConvert:
    def test_point_count_preserved(self, tmp_path):
        rows = [dump_row(f % 90, 10.5 + f, 20.25, (0.125 * f, -1.5, 3.0)) for f in range(120)]
        dump = tmp_path / "dump.txt"
        write_dump(dump, rows)
        out = tmp_path / "feats.jsonl"
        stats = convert(dump, META, MAPPING, out)
        assert stats == {"points": 120, "clamped": 0}
        record = json.loads(out.read_text().strip())
        assert len(record["points"]) == 120
        assert record["descriptor_dim"] == 3

    def test_values_lossless_full_precision(self, tmp_path):
        desc = ("0.12345678901234567", "-7.25e-3", "42.0")
        rows = [dump_row(3, "17.125", "9.875", desc)]
        dump = tmp_path / "dump.txt"
        write_dump(dump, rows)
        out = tmp_path / "feats.jsonl"
        convert(dump, META, MAPPING, out)
        point = json.loads(out.read_text())["points"][0]
        assert point["f"] == 3
        assert point["x"] == 17.125 and point["y"] == 9.875
        assert point["d"] == [float(v) for v in desc]

    def test_empty_dump_valid_record(self, tmp_path):
        dump = tmp_path / "empty.txt"
        write_dump(dump, [])
        out = tmp_path / "feats.jsonl"
        stats = convert(dump, META, MAPPING, out)
        assert stats == {"points": 0, "clamped": 0}
        record = json.loads(out.read_text())
        assert record["points"] == [] and record["id"] == "clip-7"

    def test_arity_drift_names_line(self, tmp_path):
        rows = [dump_row(1, 10, 10, (1.0, 2.0)), dump_row(2, 11, 11, (1.0, 2.0, 3.0))]
        dump = tmp_path / "drift.txt"
        write_dump(dump, rows)
        with pytest.raises(FormatError, match=":3"):
            convert(dump, META, MAPPING, tmp_path / "o.jsonl")

    def test_out_of_bounds_clamped_and_counted(self, tmp_path):
        rows = [
            dump_row(1, 500.0, 10.0, (1.0,)),   # x beyond width
            dump_row(95, 10.0, -4.0, (2.0,)),   # frame and y out of range
            dump_row(5, 10.0, 10.0, (3.0,)),
        ]
        dump = tmp_path / "oob.txt"
        write_dump(dump, rows)
        out = tmp_path / "feats.jsonl"
        stats = convert(dump, META, MAPPING, out)
        assert stats == {"points": 3, "clamped": 2}
        pts = json.loads(out.read_text())["points"]
        assert pts[0]["x"] == 319.0
        assert pts[1]["f"] == 89 and pts[1]["y"] == 0.0

    def test_appends_one_line_per_video(self, tmp_path):
        dump = tmp_path / "d.txt"
        write_dump(dump, [dump_row(1, 5, 5, (1.0, 2.0))])
        out = tmp_path / "feats.jsonl"
        convert(dump, META, MAPPING, out)
        convert(dump, VideoMeta("clip-8", None, 320, 240, 90), MAPPING, out)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[1])["id"] == "clip-8"

    def test_descriptor_len_slice(self, tmp_path):
        mapping = ColumnMap(frame=2, x=1, y=0, descriptor_start=5, descriptor_len=2)
        dump = tmp_path / "d.txt"
        write_dump(dump, [dump_row(1, 5, 5, (1.0, 2.0, 99.0))])
        out = tmp_path / "feats.jsonl"
        convert(dump, META, mapping, out)
        assert json.loads(out.read_text())["points"][0]["d"] == [1.0, 2.0]

    def test_one_based_frames(self, tmp_path):
        mapping = ColumnMap(frame=2, x=1, y=0, descriptor_start=5, frame_base=1)
        dump = tmp_path / "d.txt"
        write_dump(dump, [dump_row(1, 5, 5, (1.0,))])
        out = tmp_path / "feats.jsonl"
        convert(dump, META, mapping, out)
        assert json.loads(out.read_text())["points"][0]["f"] == 0


class TestCli:
    def write_inputs(self, tmp_path, rows):
        dump = tmp_path / "dump.txt"
        write_dump(dump, rows)
        meta = tmp_path / "meta.json"
        meta.write_text(json.dumps({
            "id": "clip-7", "label": "jump", "width": 320, "height": 240,
            "num_frames": 90,
        }), encoding="utf-8")
        cmap = tmp_path / "map.json"
        cmap.write_text(json.dumps({
            "version": 1, "comment_prefix": "#",
            "columns": {"frame": 2, "x": 1, "y": 0},
            "descriptor_start": 5, "descriptor_len": None,
        }), encoding="utf-8")
        return dump, meta, cmap

    def test_success_exit_zero(self, tmp_path, capsys):
        dump, meta, cmap = self.write_inputs(tmp_path, [dump_row(1, 5, 5, (1.0, 2.0))])
        out = tmp_path / "feats.jsonl"
        assert main(["--dump", str(dump), "--meta", str(meta),
                     "--map", str(cmap), "--out", str(out)]) == 0
        assert "points=1" in capsys.readouterr().out

    def test_missing_dump_exit_2(self, tmp_path):
        _, meta, cmap = self.write_inputs(tmp_path, [])
        assert main(["--dump", str(tmp_path / "nope.txt"), "--meta", str(meta),
                     "--map", str(cmap), "--out", str(tmp_path / "o.jsonl")]) == 2

    def test_arity_drift_exit_2(self, tmp_path, capsys):
        dump, meta, cmap = self.write_inputs(
            tmp_path, [dump_row(1, 5, 5, (1.0,)), dump_row(2, 5, 5, (1.0, 2.0))]
        )
        assert main(["--dump", str(dump), "--meta", str(meta),
                     "--map", str(cmap), "--out", str(tmp_path / "o.jsonl")]) == 2
        assert ":3" in capsys.readouterr().err


class TestPrimaryRoundTrip:
    def test_converted_file_accepted_by_primary_parser(self, tmp_path):
        staog = pytest.importorskip("staog")
        rows = [dump_row(f, 10.0 + 2 * f, 12.5 + f, (0.5 * f, -f, 2.25)) for f in range(40)]
        dump = tmp_path / "dump.txt"
        write_dump(dump, rows)
        out = tmp_path / "feats.jsonl"
        convert(dump, META, MAPPING, out)
        videos = staog.read_features(out)
        assert len(videos) == 1
        video = videos[0]
        assert video.id == "clip-7" and video.label == "jump"
        assert len(video.points) == len(rows)
        assert video.descriptor_dim == 3
        for point, row in zip(video.points, rows):
            assert point.frame == row[2]
            assert point.x == float(row[1]) and point.y == float(row[0])
            assert point.descriptor == tuple(float(v) for v in row[5:])
        print("[PASS] adapter round-trip: primary parser accepts the converted file")
