import csv
import json
import time

import numpy as np
import pytest

from emevlab.bundle import ModelBundle
from emevlab.cli import main
from emevlab.formats import read_dataset
from emevlab.metrics import read_report
from emevlab.training import read_curve

SMALL_CFG = """\
n_rb = 4
n_t = 8
n_r = 2
l_xi_v = 32
l_xi_s = 8
depth = 2
res_blocks = 1
train.max_epochs = 3
train.batch_size = 16
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL_CFG)
    for name, profile, seed in (("a", "cdl-a-like", 1), ("b", "cdl-b-like", 2)):
        assert main(["generate", "--profile", profile, "--count", "60", "--seed", str(seed),
                     "--config", str(root / "small.cfg"), "--out", str(root / f"{name}.ds")]) == 0
    return root


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sweep(work):
    """Two model kinds at three payload lengths, trained briefly."""
    paths = []
    for kind in ("emev", "baseline"):
        for l_eps in (4, 8, 16):
            out = work / f"{kind}{l_eps}.ckpt"
            assert run("train", "--data", work / "a.ds", "--model", kind, "--l-eps", l_eps,
                       "--config", work / "small.cfg", "--out", out) == 0
            paths.append(out)
    return paths


class TestGenerate:
    def test_reload_cdl_d(self, tmp_path):
        out = tmp_path / "d.ds"
        assert run("generate", "--profile", "cdl-d-like", "--count", 100, "--seed", 3,
                   "--n-rb", 2, "--n-t", 4, "--n-r", 2, "--out", out) == 0
        ds = read_dataset(out)
        assert len(ds) == 100 and ds.profile == "cdl-d-like"
        assert np.unique(ds.labels).tolist() == [3]

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("x", "y"):
            run("generate", "--profile", "cdl-c-like", "--count", 20, "--seed", 9, "--out", tmp_path / name)
        assert (tmp_path / "x").read_bytes() == (tmp_path / "y").read_bytes()

    def test_prints_checksum(self, tmp_path, capsys):
        run("generate", "--profile", "cdl-a-like", "--count", 5, "--out", tmp_path / "z")
        assert "5 samples written" in capsys.readouterr().out

    def test_mix_of_five(self, tmp_path):
        parts = []
        for i, profile in enumerate(("cdl-a-like", "cdl-b-like", "cdl-c-like", "cdl-d-like", "cdl-e-like")):
            parts.append(tmp_path / f"{i}.ds")
            run("generate", "--profile", profile, "--count", 10, "--seed", i, "--n-rb", 2, "--n-t", 4,
                "--out", parts[-1])
        assert run("generate", "--mix", *parts, "--seed", 5, "--out", tmp_path / "mix.ds") == 0
        ds = read_dataset(tmp_path / "mix.ds")
        assert len(ds) == 50 and sorted(np.unique(ds.labels)) == [0, 1, 2, 3, 4]

    def test_unknown_profile_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("generate", "--profile", "cdl-z-like", "--out", tmp_path / "q")
        assert exc.value.code == 2

    def test_unwritable_path(self, tmp_path):
        assert run("generate", "--profile", "cdl-a-like", "--count", 2,
                   "--out", tmp_path / "missing" / "x.ds") == 3


class TestTrain:
    def test_writes_checkpoint_and_curve(self, sweep, work):
        bundle = ModelBundle.load(sweep[0])
        assert bundle.kind == "emev" and bundle.config.l_eps == 4
        curve = read_curve(work / "emev4.curve.csv")
        assert [r.epoch for r in curve] == [0, 1, 2, 3]

    def test_resume_continues_curve(self, work, tmp_path):
        common = ["--data", work / "a.ds", "--l-eps", 8, "--config", work / "small.cfg", "--seed", 4]
        run("train", *common, "--epochs", 5, "--out", tmp_path / "full.ckpt")
        run("train", *common, "--epochs", 2, "--out", tmp_path / "half.ckpt")
        run("train", *common, "--epochs", 5, "--resume", tmp_path / "half.ckpt", "--out", tmp_path / "rest.ckpt")
        full = read_curve(tmp_path / "full.curve.csv")
        rest = read_curve(tmp_path / "rest.curve.csv")
        assert full == rest
        assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "rest.ckpt").read_bytes()

    def test_resume_kind_mismatch(self, sweep, work, tmp_path):
        assert run("train", "--data", work / "a.ds", "--model", "baseline", "--resume", sweep[0],
                   "--config", work / "small.cfg", "--out", tmp_path / "x.ckpt") == 2

    def test_dims_mismatch(self, work, tmp_path):
        assert run("train", "--data", work / "a.ds", "--config", work / "small.cfg", "--n-t", 4,
                   "--out", tmp_path / "x.ckpt") == 3

    def test_beta_and_length_exclusive(self, work, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("train", "--data", work / "a.ds", "--beta-h", 8, "--l-eps", 8, "--out", tmp_path / "x")
        assert exc.value.code == 2

    def test_beta_h_sets_length(self, work, tmp_path):
        assert run("train", "--data", work / "a.ds", "--beta-h", 8, "--config", work / "small.cfg",
                   "--epochs", 1, "--out", tmp_path / "x.ckpt") == 0
        assert ModelBundle.load(tmp_path / "x.ckpt").config.l_eps == 16

    def test_missing_data_file(self, tmp_path):
        assert run("train", "--data", tmp_path / "none.ds", "--out", tmp_path / "x.ckpt") == 3

    def test_toy_run_budget(self, tmp_path):
        data = tmp_path / "toy.ds"
        run("generate", "--profile", "cdl-a-like", "--count", 200, "--seed", 1, "--config", "configs/toy.cfg",
            "--out", data)
        start = time.perf_counter()
        assert run("train", "--data", data, "--l-eps", 16, "--config", "configs/toy.cfg", "--epochs", 50,
                   "--out", tmp_path / "toy.ckpt") == 0
        assert time.perf_counter() - start < 300
        assert len(read_curve(tmp_path / "toy.curve.csv")) == 51


class TestEval:
    def test_identity_row(self, work, tmp_path):
        assert run("eval", "--ckpt", "identity", "--data", work / "a.ds", "--report", tmp_path / "r.csv") == 0
        (row,) = read_report(tmp_path / "r.csv")
        assert float(row["rho_v"]) == pytest.approx(1.0) and row["nmse_v_db"] == "-inf"

    def test_sweep_gives_six_rows(self, sweep, work, tmp_path):
        assert run("eval", "--ckpt", *sweep, "--data", work / "a.ds", "--report", tmp_path / "r.csv") == 0
        rows = read_report(tmp_path / "r.csv")
        assert len(rows) == 6
        assert sorted((r["model_kind"], int(r["l_eps"])) for r in rows) == sorted(
            (k, l) for k in ("N_sp", "N_csi") for l in (4, 8, 16))

    def test_rerun_byte_identical(self, sweep, work, tmp_path):
        outputs = []
        for _ in range(2):
            run("eval", "--ckpt", sweep[1], "--data", work / "a.ds", "--report", tmp_path / "r.csv")
            outputs.append(((tmp_path / "r.csv").read_bytes(), (tmp_path / "r.json").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_manifest_heads_report(self, sweep, work, tmp_path):
        run("eval", "--ckpt", sweep[1], "--data", work / "a.ds", "--report", tmp_path / "r.csv")
        head = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert head.startswith("# emevlab ") and "cmd=eval" in head and "seeds=1" in head
        assert "# " + json.loads((tmp_path / "r.json").read_text())["manifest"] == head

    def test_dims_mismatch(self, sweep, tmp_path):
        run("generate", "--profile", "cdl-a-like", "--count", 10, "--n-t", 4, "--out", tmp_path / "s.ds")
        assert run("eval", "--ckpt", sweep[0], "--data", tmp_path / "s.ds", "--report", tmp_path / "r.csv") == 3

    def test_needs_a_codec(self, work, tmp_path):
        assert run("eval", "--data", work / "a.ds", "--report", tmp_path / "r.csv") == 2

    def test_registry_routes(self, sweep, work, tmp_path):
        run("train", "--data", work / "a.ds", "--model", "classifier", "--config", work / "small.cfg",
            "--out", tmp_path / "clf.ckpt")
        (tmp_path / "reg.cfg").write_text(
            f"classifier = clf.ckpt\nfallback = {sweep[1]}\ncdl-a-like = {sweep[1]}\n")
        assert run("eval", "--registry", tmp_path / "reg.cfg", "--data", work / "a.ds",
                   "--report", tmp_path / "r.csv") == 0
        (row,) = read_report(tmp_path / "r.csv")
        assert row["model_kind"] == "routed"

    def test_registry_without_fallback(self, sweep, work, tmp_path):
        (tmp_path / "reg.cfg").write_text(f"cdl-a-like = {sweep[1]}\n")
        assert run("eval", "--registry", tmp_path / "reg.cfg", "--data", work / "a.ds",
                   "--report", tmp_path / "r.csv") == 2


class TestCompare:
    def test_deltas(self, sweep, work, tmp_path):
        assert run("compare", "--specialized", sweep[1], "--mixed", sweep[1], "--baseline", sweep[4],
                   "--data", work / "a.ds", "--report", tmp_path / "c.csv") == 0
        (row,) = read_report(tmp_path / "c.csv")
        assert float(row["delta_mix_rho_v"]) == 0.0
        assert float(row["delta_csi_rho_v"]) == float(row["sp_rho_v"]) - float(row["csi_rho_v"])

    def test_overhead_guard(self, sweep, work, tmp_path):
        assert run("compare", "--specialized", sweep[2], "--mixed", sweep[1],
                   "--data", work / "a.ds", "--report", tmp_path / "c.csv") == 3
        assert not (tmp_path / "c.csv").exists()

    def test_needs_matching_profile_data(self, sweep, work, tmp_path):
        assert run("compare", "--specialized", sweep[1], "--data", work / "b.ds",
                   "--report", tmp_path / "c.csv") == 2


class TestFlops:
    def test_full_config(self, tmp_path, capsys):
        assert run("flops", "--config", "configs/full.cfg", "--out", tmp_path / "f.csv") == 0
        rows = list(csv.DictReader(open(tmp_path / "f.csv")))
        by_name = {r["layer"]: r for r in rows}
        assert int(by_name["Conv3D_1"]["flops"]) == 1916928
        assert rows[-1]["layer"] == "total"
        assert int(rows[-1]["flops"]) == sum(int(r["flops"]) for r in rows[:-1])
        assert "1,916,928" in capsys.readouterr().out

    def test_empty_layer_list(self, tmp_path):
        assert run("flops", "--layers", "", "--out", tmp_path / "f.csv") == 0
        rows = list(csv.reader(open(tmp_path / "f.csv")))
        assert rows == [["layer", "params", "flops"], ["total", "0", "0"]]

    def test_unknown_layer(self):
        assert run("flops", "--layers", "Conv9D") == 2
