import json

import numpy as np
import pytest

from saltseg.cli import main
from saltseg.harness.phantom import T1_TEXT
from saltseg.volume import read_volume, write_volume

TINY_CONFIG = """\
dims = 16,16,16
crop = 8,8,8
batch_size = 1
epochs = 2
steps_per_epoch = 3
train_phantoms = 1
val_phantoms = 1
hidden = 4,4
"""


@pytest.fixture
def tree_file(tmp_path):
    path = tmp_path / "t1.tree"
    path.write_text(T1_TEXT)
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    (d / "t1.tree").write_text(T1_TEXT)
    (d / "cfg.txt").write_text(TINY_CONFIG)
    tree = str(d / "t1.tree")
    assert main(["train", str(d / "cfg.txt"), "--tree", tree, "--out", str(d / "out"), "--seed", "1"]) == 0
    assert main(["phantom", str(d / "img.saltvol"), str(d / "gt.saltvol"), "--tree", tree,
                 "--dims", "12,12,10", "--seed", "5"]) == 0
    return d, tree


class TestTree:
    def test_validate(self, tree_file, capsys):
        assert main(["tree", "validate", tree_file]) == 0
        assert "10 nodes" in capsys.readouterr().out

    def test_show(self, tree_file, capsys):
        assert main(["tree", "show", tree_file]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 10
        assert lines[0] == "0 root"
        assert "        8 lung_left" in lines

    def test_matrices_chain(self, tmp_path, capsys):
        path = tmp_path / "chain.tree"
        path.write_text("0\t-\ta\n1\t0\tb\n2\t1\tc\n")
        assert main(["tree", "matrices", str(path)]) == 0
        out = capsys.readouterr().out.splitlines()
        r = out.index("R =")
        assert out[r + 1: r + 4] == ["1 1 1", "0 1 1", "0 0 1"]

    def test_parse_error(self, tmp_path, capsys):
        path = tmp_path / "bad.tree"
        path.write_text("0\t-\troot\n1\t7\tchild\n")
        assert main(["tree", "validate", str(path)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["tree", "validate", str(tmp_path / "nope")]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["tree", "frobnicate"])
        assert exc.value.code == 2


class TestTrainInfer:
    def test_outputs(self, trained):
        d, _ = trained
        lines = (d / "out" / "train_log.csv").read_text().splitlines()
        assert lines[0] == "step,lr,ce,dice,total"
        assert len(lines) == 7
        assert (d / "out" / "model.ckpt").stat().st_size > 0

    def test_infer_and_dump(self, trained):
        d, tree = trained
        out = d / "pred.saltvol"
        assert main(["infer", str(d / "out" / "model.ckpt"), str(d / "img.saltvol"), "--tree", tree,
                     "--out", str(out), "--dump-node-probs", "0,5,8,9"]) == 0
        pred = read_volume(out)
        assert pred.dtype_code == 0 and pred.data.shape == (12, 12, 10)
        assert set(np.unique(pred.data)) <= {1, 4, 6, 7, 8, 9}
        probs = {n: read_volume(d / f"pred_node{n}.saltvol").data for n in (0, 5, 8, 9)}
        np.testing.assert_allclose(probs[0], 1.0, atol=1e-6)
        np.testing.assert_allclose(probs[5], probs[8] + probs[9], atol=1e-6)

    def test_tree_mismatch(self, trained, tmp_path, capsys):
        d, _ = trained
        other = tmp_path / "other.tree"
        other.write_text(T1_TEXT.replace("lung_right", "lung_r"))
        assert main(["infer", str(d / "out" / "model.ckpt"), str(d / "img.saltvol"), "--tree", str(other),
                     "--out", str(tmp_path / "x.saltvol")]) == 1
        assert "hash" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, tree_file):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("lr = fast\n")
        assert main(["train", str(cfg), "--tree", tree_file, "--out", str(tmp_path / "o")]) == 1

    def test_bench(self, trained, capsys):
        d, tree = trained
        assert main(["bench", str(d / "out" / "model.ckpt"), "--tree", tree, "--dims", "8,8,4",
                     "--repetitions", "2"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "rep,inference_s,total_s,voxels_per_s,ms_per_slice"
        assert out[-1].startswith("median,")
        assert len(out) == 4

    def test_bench_scales_with_depth(self, trained, capsys):
        d, tree = trained
        med = []
        for z in (16, 32):
            main(["bench", str(d / "out" / "model.ckpt"), "--tree", tree, "--dims", f"32,32,{z}",
                  "--repetitions", "3"])
            med.append(float(capsys.readouterr().out.splitlines()[-1].split(",")[2]))
        assert 1.2 < med[1] / med[0] < 4.0


class TestEval:
    def test_identical(self, trained, tmp_path, capsys):
        d, tree = trained
        csv, js = tmp_path / "r.csv", tmp_path / "r.json"
        assert main(["eval", str(d / "gt.saltvol"), str(d / "gt.saltvol"), "--tree", tree,
                     "--classes", "lungs,lung_left,body", "--csv", str(csv), "--json", str(js),
                     "--bootstrap", "50"]) == 0
        rows = csv.read_text().splitlines()
        assert rows[0] == "volume,class,dice,nsd"
        assert len(rows) == 4
        report = json.loads(js.read_text())
        assert report["macro_dice"] == 1.0 and report["macro_nsd"] == 1.0

    def test_manifest_deterministic(self, trained, tmp_path):
        d, tree = trained
        write_volume(tmp_path / "gt.saltvol", read_volume(d / "gt.saltvol").data)
        pred = read_volume(d / "gt.saltvol").data.copy()
        pred[:3] = 1
        write_volume(tmp_path / "pred.saltvol", pred)
        (tmp_path / "m.txt").write_text("gt.saltvol pred.saltvol a\ngt.saltvol gt.saltvol b\n")
        outs = []
        for name in ("x.json", "y.json"):
            assert main(["eval", "--manifest", str(tmp_path / "m.txt"), "--tree", tree, "--seed", "3",
                         "--bootstrap", "100", "--json", str(tmp_path / name), "--csv", str(tmp_path / "r.csv")]) == 0
            outs.append((tmp_path / name).read_text())
        assert outs[0] == outs[1]
        report = json.loads(outs[0])
        assert report["macro_dice"] < 1.0

    def test_dim_mismatch(self, trained, tmp_path, capsys):
        d, tree = trained
        write_volume(tmp_path / "small.saltvol", np.ones((4, 4, 4), dtype=np.uint16))
        assert main(["eval", str(d / "gt.saltvol"), str(tmp_path / "small.saltvol"), "--tree", tree]) == 1
        assert "dims" in capsys.readouterr().err

    def test_unknown_class(self, trained):
        d, tree = trained
        assert main(["eval", str(d / "gt.saltvol"), str(d / "gt.saltvol"), "--tree", tree,
                     "--classes", "spleen"]) == 1
