import json
import subprocess
import sys

import pytest

from foulscope.cli import main
from foulscope.fitting import FrameLabel
from foulscope.metrics import slof_from_coverage
from foulscope.formats import (read_bank_json, read_scores_csv, write_bank_json, write_embeddings,
                               write_labels_csv, write_scores_csv, ScoreRow)
from foulscope.synthetic import planted_dataset, synthetic_transect


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ps = planted_dataset(n_pos=30, n_neg=30, dim=24, n_dirs=6, seed=5)
    write_embeddings(d / "train.cfeb", ps.data.frames)
    labels = {f.frame_id: lab for f, lab in zip(ps.data.frames, ps.data.labels)}
    (d / "labels.csv").write_bytes(write_labels_csv(labels))
    neg_only = {k: FrameLabel(False, 0, v.split) for k, v in labels.items()}
    (d / "neg_labels.csv").write_bytes(write_labels_csv(neg_only))
    tr = synthetic_transect(duration_s=15, fouled_interval=(0, 5), gap_interval=(5, 8), dim=16, seed=1)
    write_embeddings(d / "video.cfeb", tr.frames)
    (d / "hull.json").write_text(write_bank_json(tr.hull_bank))
    (d / "foul.json").write_text(write_bank_json(tr.fouling_bank))
    return d


def run(*argv):
    return main([str(a) for a in argv])


def fit_args(d, out, seeds=2):
    return ["fit", "--embeddings", d / "train.cfeb", "--labels", d / "labels.csv", "--out", out,
            "--prototypes-per-class", 6, "--seeds", seeds]


class TestFit:
    def test_fit_and_table(self, workspace, capsys):
        out = workspace / "bank.json"
        assert run(*fit_args(workspace, out)) == 0
        table = capsys.readouterr().out
        assert "validation_ap" in table and "chosen seed" in table
        bank = read_bank_json(out.read_text())
        assert [p.shape[0] for p in bank.prototypes] == [6, 6]
        assert len(bank.metadata["exemplars"]) == 12
        assert all(len(e["exemplars"]) == 5 for e in bank.metadata["exemplars"])

    def test_single_seed(self, workspace, capsys):
        assert run(*fit_args(workspace, workspace / "b1.json", seeds=1)) == 0
        rows = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip()[:1].isdigit()]
        assert len(rows) == 1

    def test_missing_positive_exit3(self, workspace, capsys):
        args = fit_args(workspace, workspace / "x.json")
        args[4] = workspace / "neg_labels.csv"
        assert run(*args) == 3
        assert "MissingClassData" in capsys.readouterr().err


class TestScoreEval:
    def test_score_heatmap_eval(self, workspace, capsys):
        bank = workspace / "bank.json"
        if not bank.exists():
            run(*fit_args(workspace, bank))
        scores, heat = workspace / "scores.csv", workspace / "heat.csv"
        assert run("score", "--bank", bank, "--embeddings", workspace / "train.cfeb", "--out", scores,
                   "--heatmap-out", heat) == 0
        rows = read_scores_csv(scores.read_bytes())
        assert len(rows) == 60
        assert all(r.slof_pred == slof_from_coverage(r.coverage) for r in rows)
        assert len(heat.read_text().splitlines()) == 1 + 60 * 20
        ev = workspace / "eval.json"
        assert run("eval", "--scores", scores, "--labels", workspace / "labels.csv", "--out", ev) == 0
        doc = json.loads(ev.read_text())
        assert doc["average_precision"] >= 0.99
        assert (workspace / "eval.pr.csv").read_text().startswith("threshold,precision,recall\n")
        assert "average_precision" in capsys.readouterr().out

    def test_eval_four_items(self, tmp_path):
        sc = tmp_path / "s.csv"
        sc.write_bytes(write_scores_csv([ScoreRow(f"i{i}", s, 0.0, 0) for i, s in enumerate([0.9, 0.8, 0.7, 0.6])]))
        lab = tmp_path / "l.csv"
        lab.write_text("image_id,presence,slof,split\ni0,1,,train\ni1,0,,train\ni2,1,,train\ni3,0,,train\n")
        assert run("eval", "--scores", sc, "--labels", lab, "--out", tmp_path / "e.json") == 0
        assert abs(json.loads((tmp_path / "e.json").read_text())["average_precision"] - 5 / 6) < 1e-9

    def test_eval_unmatched_exit3(self, tmp_path):
        sc = tmp_path / "s.csv"
        sc.write_bytes(write_scores_csv([ScoreRow("zz", 0.5, 0.0, 0)]))
        lab = tmp_path / "l.csv"
        lab.write_text("image_id,presence,slof,split\ni0,1,,train\n")
        assert run("eval", "--scores", sc, "--labels", lab, "--out", tmp_path / "e.json") == 3

    def test_score_dim_mismatch_exit3(self, workspace):
        assert run("score", "--bank", workspace / "hull.json", "--embeddings", workspace / "train.cfeb",
                   "--out", workspace / "bad.csv") == 3


class TestVideo:
    def args(self, d, tag, *extra):
        return ["video", "--hull-bank", d / "hull.json", "--fouling-bank", d / "foul.json",
                "--embeddings", d / "video.cfeb", "--out-report", d / f"{tag}.json",
                "--out-timeline", d / f"{tag}.csv", *extra]

    def test_video(self, workspace, capsys):
        assert run(*self.args(workspace, "rep")) == 0
        doc = json.loads((workspace / "rep.json").read_text())
        assert doc["config"]["hull_threshold"] == 0.75 and doc["config"]["fouling_threshold"] == 0.25
        n_hull = doc["summary"]["n_hull_present"]
        assert len(doc["timeline"]) == 150
        assert len((workspace / "rep.csv").read_text().splitlines()) == 1 + n_hull
        assert "hull_present" in capsys.readouterr().out

    def test_rate_above_native_exit2(self, workspace):
        assert run(*self.args(workspace, "bad", "--sample-fps", 60)) == 2

    def test_empty_stream_exit3(self, workspace, tmp_path):
        empty = tmp_path / "empty.cfeb"
        empty.write_bytes(b"")
        a = self.args(workspace, "e")
        a[6] = empty
        assert run(*a) == 3


class TestExemplarsSummarize:
    def test_exemplars(self, workspace):
        bank = workspace / "bank.json"
        if not bank.exists():
            run(*fit_args(workspace, bank))
        for top, want in [(5, 5), (1, 1)]:
            out = workspace / f"ex{top}.json"
            assert run("exemplars", "--bank", bank, "--embeddings", workspace / "train.cfeb", "--out", out,
                       "--top", top) == 0
            doc = json.loads(out.read_text())
            assert all(len(p["exemplars"]) == want for p in doc["prototypes"])

    def test_summarize(self, workspace):
        out = workspace / "sum.json"
        assert run("summarize", "--embeddings", workspace / "train.cfeb", "--out", out, "--clusters", 4) == 0
        assert len(json.loads(out.read_text())["selected"]) == 4


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["bogus"], ["fit"], ["eval", "--scores", "a"],
                                      ["score", "--bank", "a", "--embeddings", "b", "--out", "c",
                                       "--coverage-threshold", "2"]])
    def test_usage_exit2(self, argv, capsys):
        assert main(argv) == 2

    def test_missing_file_exit3(self, tmp_path):
        assert run("summarize", "--embeddings", tmp_path / "nope.cfeb", "--out", tmp_path / "o.json") == 3

    def test_help_exit0(self, capsys):
        assert main(["--help"]) == 0

    def test_global_flag_either_side(self, workspace):
        a, b = workspace / "s1.json", workspace / "s2.json"
        assert run("--seed", 3, "summarize", "--embeddings", workspace / "train.cfeb", "--out", a) == 0
        assert run("summarize", "--seed", 3, "--embeddings", workspace / "train.cfeb", "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_console_script(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "foulscope.cli", "video"], capture_output=True)
        assert r.returncode == 2


def test_inputs_not_mutated(workspace):
    before = {p.name: p.read_bytes() for p in workspace.iterdir() if p.suffix in (".cfeb",)}
    run(*fit_args(workspace, workspace / "m.json", seeds=1))
    after = {p.name: p.read_bytes() for p in workspace.iterdir() if p.suffix in (".cfeb",)}
    assert before == after
