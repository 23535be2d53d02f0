import json
import shutil

import numpy as np
import pytest
from PIL import Image

from aesthrec.cli import main
from aesthrec.dataset import write_interactions
from aesthrec.stylefeat import (
    AestheticSets,
    FeatureMap,
    read_features,
    write_feature_maps,
)

from testutil import DATA_DIR, make_interactions


@pytest.fixture
def interactions_file(rng, tmp_path):
    records = make_interactions(rng, num_users=25, num_items=18, per_user=5)
    path = tmp_path / "interactions.tsv"
    write_interactions(records, path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestSplitCommand:
    def test_writes_partition_and_manifest(self, interactions_file, tmp_path):
        out = tmp_path / "splits"
        assert run("split", "--interactions", interactions_file, "--num-splits", 2,
                   "--train-frac", 0.7, "--valid-frac", 0.15, "--out", out) == 0
        assert (out / "splits.tsv").exists()
        lines = (out / "splits.tsv").read_text().splitlines()
        assert len(lines) == 2
        for index, line in enumerate(lines):
            fields = line.split("\t")
            assert int(fields[0]) == index
            assert int(fields[1]) < int(fields[2])
        config = json.loads((out / "run.json").read_text())["config"]
        assert config["num_splits"] == 2
        for sub in ("split_00", "split_01"):
            for part in ("train.tsv", "validation.tsv", "test.tsv"):
                assert (out / sub / part).stat().st_size > 0

    def test_insufficient_data_exits_one(self, tmp_path, capsys):
        path = tmp_path / "tiny.tsv"
        path.write_text("u\tp\t1\n")
        out = tmp_path / "splits"
        assert run("split", "--interactions", path, "--out", out) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ")
        assert "\n" not in err.strip("\n") or err.count("\n") == 1
        assert not out.exists()  # no partial artifacts


class TestFeatureCommands:
    def test_color_command(self, tmp_path):
        imgs = tmp_path / "imgs"
        imgs.mkdir()
        for name, color in [("a", (255, 0, 0)), ("b", (10, 200, 30))]:
            Image.new("RGB", (6, 4), color).save(imgs / f"{name}.png")
        out = tmp_path / "color.phfv"
        assert run("color", "--images", imgs, "--space", "hsv", "--bins", 8, "--out", out) == 0
        table = read_features(out)
        assert len(table) == 2 and table.dim == 24
        manifest = json.loads((tmp_path / "color.phfv.manifest.json").read_text())
        assert manifest["config"]["bins"] == 8
        assert manifest["records"] == 2

    def test_meta_command(self, tmp_path):
        meta = tmp_path / "meta.tsv"
        meta.write_text("p1\tnature,macro\tforest\t1\np2\turban\t\t0\n")
        out = tmp_path / "meta.phfv"
        assert run("meta", "--metadata", meta, "--out", out) == 0
        table = read_features(out)
        assert len(table) == 2
        assert table.dim == 5  # four tokens plus the editors-choice slot
        assert table.vector("p1").sum() == 4.0

    def test_gram_command_on_checked_in_fixture(self, tmp_path):
        out = tmp_path / "style.phfv"
        assert run("gram", "--maps", DATA_DIR / "maps_layer5.phfm", "--out", out) == 0
        table = read_features(out)
        assert len(table) == 4 and table.dim == 64

    def test_gram_rejects_mixed_layers(self, tmp_path, capsys):
        out = tmp_path / "style.phfv"
        code = run(
            "gram",
            "--maps", DATA_DIR / "maps_layer5.phfm",
            "--maps", DATA_DIR / "maps_layer8.phfm",
            "--out", out,
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err
        assert not out.exists()


class TestLayerSelectCommand:
    def _make_inputs(self, rng, tmp_path):
        ids = [f"p{i}" for i in range(6)]
        sets = AestheticSets([ids[:3], ids[3:]])
        sets_path = tmp_path / "sets.json"
        sets.to_json(sets_path)
        paths = {}
        for layer in (1, 2):
            maps = []
            for i, pid in enumerate(ids):
                base = np.full((4, 9), 50.0 * (i // 3), dtype=np.float32) if layer == 2 else None
                data = (
                    base + rng.normal(size=(4, 9)).astype(np.float32) * 0.01
                    if layer == 2
                    else rng.normal(size=(4, 9)).astype(np.float32)
                )
                maps.append(FeatureMap(pid, layer, data))
            map_path = tmp_path / f"maps{layer}.phfm"
            write_feature_maps(maps, map_path)
            out = tmp_path / f"style{layer}.phfv"
            assert run("gram", "--maps", map_path, "--out", out) == 0
            paths[layer] = out
        return sets_path, paths

    def test_selects_constructed_winner(self, rng, tmp_path, capsys):
        sets_path, paths = self._make_inputs(rng, tmp_path)
        out = tmp_path / "layers.csv"
        code = run(
            "layer-select",
            "--features", f"1={paths[1]}",
            "--features", f"2={paths[2]}",
            "--sets", sets_path,
            "--k", "2,4",
            "--out", out,
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert "best layer=2" in stdout
        rows = out.read_text().splitlines()
        assert rows[0] == "layer,kernel,k,precision"
        assert len(rows) == 1 + 2 * 3 * 2
        manifest = json.loads((tmp_path / "layers.csv.manifest.json").read_text())
        assert manifest["best"]["layer"] == 2


class TestEvaluateCommand:
    def _splits(self, interactions_file, tmp_path):
        out = tmp_path / "splits"
        assert run("split", "--interactions", interactions_file, "--num-splits", 2,
                   "--train-frac", 0.7, "--valid-frac", 0.15, "--out", out) == 0
        return out

    def test_popular_report_has_three_metrics(self, interactions_file, tmp_path):
        splits = self._splits(interactions_file, tmp_path)
        out = tmp_path / "report.json"
        assert run("evaluate", "--splits-dir", splits, "--model", "popular",
                   "--k", 5, "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["model"] == "popular"
        assert set(report["metrics"]) == {"precision_at_5", "r_precision", "average_precision"}
        for body in report["metrics"].values():
            assert set(body) == {"splits", "mean", "ci95"}
            assert len(body["splits"]) == 2
            assert 0.0 <= body["mean"] <= 1.0
            assert body["ci95"] >= 0.0

    def test_loaded_splits_match_original_maps(self, interactions_file, tmp_path):
        from aesthrec.cli import _load_splits
        from aesthrec.dataset import load_interactions, temporal_split
        import argparse

        splits_dir = self._splits(interactions_file, tmp_path)
        loaded = _load_splits(argparse.Namespace(splits_dir=str(splits_dir)))
        original = temporal_split(load_interactions(interactions_file), 2, 0.7, 0.15)
        for a, b in zip(loaded, original):
            assert a.train.user_index == b.train.user_index
            assert a.train.item_index == b.train.item_index
            assert a.train.to_interactions() == b.train.to_interactions()
            assert a.test.to_interactions() == b.test.to_interactions()

    def test_item_nn_with_features_end_to_end(self, rng, interactions_file, tmp_path):
        from aesthrec.features import FeatureTable
        from aesthrec.stylefeat import write_features

        splits = self._splits(interactions_file, tmp_path)
        items = [line for line in (splits / "items.tsv").read_text().splitlines()]
        table = FeatureTable(items, rng.normal(size=(len(items), 5)).astype(np.float32))
        feat_path = tmp_path / "feat.phfv"
        write_features(table, feat_path)
        out = tmp_path / "nn.json"
        code = run(
            "evaluate", "--splits-dir", splits, "--model", "item-nn",
            "--theta", 0.3, "--side-kernel", "euclidean", "--interaction-kernel", "cosine",
            "--features", feat_path, "--k", 5, "--out", out,
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["config"]["theta"] == 0.3

    def test_theta_without_features_fails(self, interactions_file, tmp_path, capsys):
        splits = self._splits(interactions_file, tmp_path)
        out = tmp_path / "x.json"
        assert run("evaluate", "--splits-dir", splits, "--model", "item-nn",
                   "--theta", 0.5, "--out", out) == 1
        assert "features" in capsys.readouterr().err
        assert not out.exists()

    def test_explicit_triple_flags(self, interactions_file, tmp_path):
        splits = self._splits(interactions_file, tmp_path)
        base = splits / "split_00"
        out = tmp_path / "r.json"
        code = run(
            "evaluate", "--train", base / "train.tsv", "--valid", base / "validation.tsv",
            "--test", base / "test.tsv", "--model", "random", "--seed", 3,
            "--k", 5, "--out", out,
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["metrics"]["precision_at_5"]["ci95"] is None

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as err:
            run("evaluate", "--model", "bogus", "--out", "x.json")
        assert err.value.code == 2


class TestTuneCommand:
    def test_single_cell_grid_echoed(self, interactions_file, tmp_path):
        splits_dir = tmp_path / "splits"
        assert run("split", "--interactions", interactions_file, "--num-splits", 2,
                   "--train-frac", 0.7, "--valid-frac", 0.15, "--out", splits_dir) == 0
        out = tmp_path / "tune.json"
        code = run(
            "tune", "--splits-dir", splits_dir, "--thetas", "0",
            "--side-kernels", "cosine", "--interaction-kernels", "cosine",
            "--k", 5, "--out", out,
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["best"] == {
            "theta": 0.0, "side_kernel": "cosine", "interaction_kernel": "cosine"
        }
        assert len(payload["grid"]) == 1
        assert len(payload["grid"][0]["splits"]) == 2


class TestReproducibility:
    def test_rerun_is_byte_identical(self, rng, interactions_file, tmp_path):
        base = tmp_path / "out"
        splits = base / "splits"
        report = base / "report.json"

        def run_all():
            assert run("split", "--interactions", interactions_file, "--num-splits", 2,
                       "--train-frac", 0.7, "--valid-frac", 0.15, "--out", splits) == 0
            assert run("evaluate", "--splits-dir", splits, "--model", "random",
                       "--seed", 11, "--k", 5, "--out", report) == 0
            return {
                p.relative_to(base): p.read_bytes() for p in sorted(base.rglob("*")) if p.is_file()
            }

        first = run_all()
        shutil.rmtree(base)
        second = run_all()
        assert first == second
