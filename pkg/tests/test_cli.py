import json

import pytest

from liftreg.cli import ABLATION_AXES, main
from liftreg.dataset import read_manifest, read_pose

FAST = ["--samples", "500,250", "--iterations", "2000"]


def generate(out, *extra):
    return main(
        ["generate", "--pairs", "2", "--height", "64", "--width", "80", "--frames", "3", "--overlap", "0.5",
         "--overlap-tolerance", "0.2", "--seed", "4", "--out", str(out), *extra]
    )


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert generate(out) == 0
    return out


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenerate:
    def test_loadable(self, data):
        assert read_manifest(data).pair_ids == ["pair-000", "pair-001"]

    def test_same_seed_same_bytes(self, data, tmp_path, capsys):
        assert generate(tmp_path / "again") == 0
        assert "pair-001  overlap" in capsys.readouterr().out
        assert tree_bytes(tmp_path / "again") == tree_bytes(data)

    def test_missing_out(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["generate", "--pairs", "1"])
        assert info.value.code == 2

    def test_bad_spec_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["generate", "--height", "10", "--out", str(tmp_path / "x")])
        assert info.value.code == 2

    def test_refuses_non_empty(self, data, capsys):
        assert generate(data) == 1
        assert "--force" in capsys.readouterr().err


class TestRegister:
    def test_pose_file(self, data, tmp_path, capsys):
        assert main(["register", str(data), "--pair", "pair-000", "--out", str(tmp_path), "--ply", *FAST]) == 0
        read_pose(tmp_path / "pair-000.pose.txt")
        assert (tmp_path / "pair-000.aligned.ply").is_file()
        assert "mode=explicit-patch" in capsys.readouterr().out

    def test_modes_deterministic(self, data, tmp_path, capsys):
        outputs = {}
        for mode in ("implicit", "explicit"):
            for k in range(2):
                d = tmp_path / f"{mode}{k}"
                args = ["register", str(data), "--pair", "pair-001", "--out", str(d), "--mode", mode, "--provider", "rgb", *FAST]
                assert main(args) == 0
                out = capsys.readouterr().out
                assert f"mode={mode}-rgb" in out
                outputs.setdefault(mode, []).append((d / "pair-001.pose.txt").read_bytes())
        assert all(a == b for a, b in outputs.values())

    def test_unknown_pair(self, data, tmp_path, capsys):
        assert main(["register", str(data), "--pair", "pair-999", "--out", str(tmp_path)]) == 1
        assert "pair-999" in capsys.readouterr().err

    def test_overwrite_needs_force(self, data, tmp_path):
        args = ["register", str(data), "--pair", "pair-000", "--out", str(tmp_path), *FAST]
        assert main(args) == 0
        assert main(args) == 1
        assert main(args + ["--force"]) == 0

    @pytest.mark.parametrize("flag", [["--window", "4"], ["--views", "0"], ["--samples", "0"], ["--mode", "magic"]])
    def test_usage_errors(self, data, tmp_path, flag):
        with pytest.raises(SystemExit) as info:
            main(["register", str(data), "--pair", "pair-000", "--out", str(tmp_path), *flag])
        assert info.value.code == 2


class TestEvaluate:
    def test_table_and_records(self, data, tmp_path, capsys):
        out = tmp_path / "ev"
        assert main(["evaluate", str(data), "--out", str(out), "--tau3", "0.15", *FAST]) == 0
        table = (out / "report.txt").read_text()
        assert "Feature Matching Recall (%)" in table and "Registration Recall (%)" in table
        counts = next(l for l in table.splitlines() if l.startswith("# Sampled"))
        assert counts.split()[-2:] == ["500", "250"]
        assert "tau3=0.15" in table and "tau1=0.1 " in table
        recs = [json.loads(l) for l in (out / "records.jsonl").read_text().splitlines()]
        assert [(r["pair_id"], r["samples"]) for r in recs] == [
            ("pair-000", 500), ("pair-001", 500), ("pair-000", 250), ("pair-001", 250)
        ]
        assert capsys.readouterr().out == table

    def test_empty_manifest(self, tmp_path):
        root = tmp_path / "empty"
        root.mkdir()
        (root / "intrinsics.txt").write_text("50 50 31.5 31.5 64 64\n")
        (root / "manifest.txt").write_text("version 1\n")
        assert main(["evaluate", str(root), "--out", str(tmp_path / "o")]) == 0
        assert "pairs: 0" in (tmp_path / "o" / "report.txt").read_text()
        assert (tmp_path / "o" / "records.jsonl").read_text() == ""

    def test_refuses_overwrite(self, data, tmp_path):
        out = tmp_path / "ev"
        args = ["evaluate", str(data), "--out", str(out), "--samples", "250", "--iterations", "500"]
        assert main(args) == 0
        assert main(args) == 1
        assert main(args + ["--force"]) == 0

    def test_bad_dataset(self, tmp_path, capsys):
        assert main(["evaluate", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 1
        assert "error" in capsys.readouterr().err

    def test_bad_jobs(self, data, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["evaluate", str(data), "--out", str(tmp_path), "--jobs", "0"])
        assert info.value.code == 2


class TestAblate:
    def test_window(self, data, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", str(data), "--axis", "window", "--out", str(out), *FAST]) == 0
        for w in ABLATION_AXES["window"]:
            assert (out / f"window-{w}" / "report.txt").is_file()
        rows = [l.split()[0] for l in (out / "comparison.txt").read_text().splitlines() if not l.startswith("#")][1:]
        assert rows == ["3", "7", "11", "17"]

    def test_views_coverage_monotone(self, data, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", str(data), "--axis", "views", "--out", str(out), *FAST]) == 0
        lines = [l.split() for l in (out / "comparison.txt").read_text().splitlines() if not l.startswith("#")][1:]
        cov = [float(l[1]) for l in lines]
        assert [l[0] for l in lines] == ["1", "2", "3"]
        assert cov == sorted(cov)

    def test_mode_same_seeds(self, data, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", str(data), "--axis", "mode", "--out", str(out), "--seed", "7", *FAST]) == 0
        for m in ("implicit", "explicit"):
            assert "seed=7" in (out / f"mode-{m}" / "report.txt").read_text()

    def test_unknown_axis(self, data, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["ablate", str(data), "--axis", "colour", "--out", str(tmp_path)])
        assert info.value.code == 2
