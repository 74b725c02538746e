import json
import math
import re

import numpy as np
import pytest

from jointchar.cli import main, parse_perplexities
from jointchar.fileio import read_csv
from jointchar.synthetic import read_ppm


def run(*args):
    return main([str(a) for a in args])


def circles(svg_text):
    return re.findall(r"<circle [^>]*fill=\"(#[0-9a-f]{6})\"", svg_text)


@pytest.fixture
def fig1(tmp_path):
    path = tmp_path / "fig1.ppm"
    assert run("synth", "--figure", 1, "--out", path) == 0
    return path


class TestSynth:
    def test_figure1(self, fig1, tmp_path):
        img = read_ppm(fig1)
        assert img.pixels.shape == (100, 100, 3)
        assert len({tuple(p) for p in img.pixels.reshape(-1, 3)}) == 19
        runs = json.loads((tmp_path / "manifest.json").read_text())["runs"]
        assert runs[0]["command"][:3] == ["jointchar", "synth", "--figure"]

    def test_figure2(self, tmp_path):
        assert run("synth", "--figure", 2, "--out", tmp_path / "f2.ppm") == 0
        assert read_ppm(tmp_path / "f2.ppm").pixels.shape == (200, 200, 3)

    def test_invalid_figure_is_usage_error(self, tmp_path, capsys):
        assert run("synth", "--figure", 4, "--out", tmp_path / "x.ppm") == 1
        assert not (tmp_path / "x.ppm").exists()
        err = capsys.readouterr().err.strip()
        assert len(err.splitlines()) == 1

    def test_no_command(self):
        assert run() == 1


class TestPca:
    def test_figure1_ratio(self, fig1, tmp_path):
        assert run("pca", fig1, "--k", 3, "--out-dir", tmp_path / "pca") == 0
        header, rows = read_csv(tmp_path / "pca" / "model.csv")
        assert header[:3] == ["component_index", "eigenvalue", "ratio"]
        assert float(rows[0][2]) >= 1 - 1e-9
        _, scores = read_csv(tmp_path / "pca" / "scores.csv")
        assert len(scores) == 10000

    def test_csv_passthrough(self, tmp_path):
        (tmp_path / "toy.csv").write_text("a,b\n1,1\n2,2\n3,3\n4,4\n")
        assert run("pca", tmp_path / "toy.csv", "--k", 1, "--out-dir", tmp_path / "o") == 0
        header, rows = read_csv(tmp_path / "o" / "scores.csv")
        assert header == ["pixel_row", "pixel_col", "pc1"]
        got = [float(r[2]) for r in rows]
        want = [(t - 2.5) * math.sqrt(2) for t in (1, 2, 3, 4)]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_cube_uses_107_bands(self, tmp_path):
        assert run("synth", "--figure", "veg", "--lines", 8, "--samples", 8, "--out", tmp_path / "c.img") == 0
        assert run("pca", tmp_path / "c.hdr", "--reflectance-scale", 1e-4, "--out-dir", tmp_path / "o") == 0
        header, _ = read_csv(tmp_path / "o" / "model.csv")
        assert len(header) == 3 + 107

    def test_missing_input(self, tmp_path, capsys):
        assert run("pca", tmp_path / "nope.ppm", "--out-dir", tmp_path / "o") == 2
        assert "not found" in capsys.readouterr().err


class TestTsne:
    def test_defaults_and_determinism(self, fig1, tmp_path):
        args = ["tsne", fig1, "--max-samples", 300, "--iterations", 300, "--seed", 7]
        assert run(*args, "--out-dir", tmp_path / "a") == 0
        assert run(*args, "--out-dir", tmp_path / "b") == 0
        a = (tmp_path / "a" / "embedding.csv").read_bytes()
        assert a == (tmp_path / "b" / "embedding.csv").read_bytes()
        meta = (tmp_path / "a" / "embedding.meta").read_text()
        assert "perplexity=30" in meta and "seed=7" in meta
        runs = json.loads((tmp_path / "a" / "manifest.json").read_text())["runs"]
        assert runs[0]["seeds"] == [7] and len(runs[0]["inputs"]) == 1

    def test_bad_perplexity(self, fig1, tmp_path):
        assert run("tsne", fig1, "--perplexity", 0, "--out-dir", tmp_path / "o") == 2
        assert not (tmp_path / "o" / "embedding.csv").exists()

    def test_input_space_pc(self, fig1, tmp_path):
        assert run("tsne", fig1, "--input-space", "pc:1", "--max-samples", 200, "--iterations", 260,
                   "--out-dir", tmp_path / "o") == 0
        assert "n_features=1" in (tmp_path / "o" / "embedding.meta").read_text()
        assert run("tsne", fig1, "--input-space", "pcs", "--out-dir", tmp_path / "p") == 1


class TestPipeline:
    def test_joint_roi_plot(self, fig1, tmp_path):
        assert run("pca", fig1, "--out-dir", tmp_path / "pca") == 0
        assert run("tsne", fig1, "--max-samples", 400, "--iterations", 300, "--out-dir", tmp_path / "ts") == 0
        assert run("joint", "--scores", tmp_path / "pca" / "scores.csv", "--embedding",
                   tmp_path / "ts" / "embedding.csv", "--out-dir", tmp_path / "j") == 0
        header, rows = read_csv(tmp_path / "j" / "joint.csv")
        assert header == ["pixel_row", "pixel_col", "pc1", "pc2", "pc3", "tsne1", "tsne2"]
        assert len(rows) == 400

        (tmp_path / "r.txt").write_text(
            "dark;PC1;TSNE1;-1e4,-1e4 0,-1e4 0,1e4 -1e4,1e4\n"
            "bright;PC1;TSNE1;1e-9,-1e4 1e4,-1e4 1e4,1e4 1e-9,1e4\n")
        assert run("roi", "--joint", tmp_path / "j" / "joint.csv", "--rois", tmp_path / "r.txt",
                   "--input", fig1, "--out-dir", tmp_path / "roi") == 0
        out = tmp_path / "roi"
        for name in ("roi_dark_stats.csv", "td_matrix.csv", "roi_differences.csv", "footprint.pgm", "footprint.ppm"):
            assert (out / name).exists()
        header, rows = read_csv(out / "roi_dark_stats.csv")
        assert header == ["wavelength_nm", "mean_reflectance"] and len(rows) == 3
        _, td = read_csv(out / "td_matrix.csv")
        assert float(td[0][2]) == float(td[1][1]) and 0 <= float(td[0][2]) <= 2 and float(td[0][1]) == 0

        assert run("plot", tmp_path / "j" / "joint.csv", "--x", "PC1", "--y", "TSNE1", "--image", fig1,
                   "--out", tmp_path / "j" / "p.svg") == 0
        svg = (tmp_path / "j" / "p.svg").read_text()
        assert len(circles(svg)) == 400
        runs = json.loads((tmp_path / "j" / "manifest.json").read_text())["runs"]
        assert [r["command"][1] for r in runs] == ["joint", "plot"]

    def test_unknown_axis_line_number(self, tmp_path, capsys):
        (tmp_path / "j.csv").write_text("pixel_row,pixel_col,pc1,tsne1,tsne2\n0,0,1,2,3\n0,1,2,3,4\n0,2,3,1,1\n")
        (tmp_path / "s.csv").write_text("pixel_row,pixel_col,v\n0,0,1\n0,1,2\n0,2,3\n")
        (tmp_path / "r.txt").write_text("ok;PC1;TSNE1;0,0 9,0 9,9\n\nbad;PC2;TSNE1;0,0 1,0 1,1\n")
        assert run("roi", "--joint", tmp_path / "j.csv", "--rois", tmp_path / "r.txt",
                   "--input", tmp_path / "s.csv", "--out-dir", tmp_path / "o") == 2
        err = capsys.readouterr().err
        assert "UnknownAxis" in err and "line 3" in err
        assert not (tmp_path / "o").exists()

    def test_shuffled_embedding(self, tmp_path):
        (tmp_path / "s.csv").write_text("pixel_row,pixel_col,pc1\n0,0,1\n0,1,2\n0,2,3\n")
        (tmp_path / "e.csv").write_text("pixel_row,pixel_col,tsne1,tsne2\n0,1,0,0\n0,0,1,1\n0,2,2,2\n")
        assert run("joint", "--scores", tmp_path / "s.csv", "--embedding", tmp_path / "e.csv",
                   "--out-dir", tmp_path / "o") == 2


class TestSweep:
    def test_row_count(self, tmp_path):
        img = tmp_path / "f2.ppm"
        assert run("synth", "--figure", 2, "--out", img) == 0
        assert run("sweep", img, "--perplexities", "5:15:5", "--seeds", "0,1", "--max-samples", 120,
                   "--iterations", 260, "--out-dir", tmp_path / "s") == 0
        header, rows = read_csv(tmp_path / "s" / "dispersion.csv")
        assert header == ["perplexity", "seed", "group", "dispersion"]
        groups = {r[2] for r in rows}
        assert len(rows) == 3 * 2 * len(groups)
        assert [r[0] for r in rows[:: len(groups) * 2]] == ["5", "10", "15"]

    def test_perplexity_syntax(self):
        assert parse_perplexities("5:50:5") == [5, 10, 15, 20, 25, 30, 35, 40, 45, 50]
        assert parse_perplexities("2.5,30") == [2.5, 30]


class TestPlot:
    def write(self, tmp_path, body):
        (tmp_path / "d.csv").write_text(body)
        return tmp_path / "d.csv"

    def test_three_points(self, tmp_path):
        csv = self.write(tmp_path, "x,y,c\n0,0,a\n1,2,b\n2,1,a\n")
        assert run("plot", csv, "--x", "x", "--y", "y", "--color-by", "c", "--categorical",
                   "--out", tmp_path / "p.svg") == 0
        svg = (tmp_path / "p.svg").read_text()
        assert svg.startswith("<?xml") and 'version="1.1"' in svg
        fills = circles(svg)
        assert len(fills) == 3 and fills[0] == fills[2] != fills[1]
        assert ">x</text>" in svg and ">y</text>" in svg

    def test_constant_color_and_determinism(self, tmp_path):
        csv = self.write(tmp_path, "x,y,c\n0,0,5\n1,2,5\n2,1,5\n3,3,5\n")
        assert run("plot", csv, "--x", "x", "--y", "y", "--color-by", "c", "--out", tmp_path / "a.svg") == 0
        assert run("plot", csv, "--x", "x", "--y", "y", "--color-by", "c", "--out", tmp_path / "b.svg") == 0
        a = (tmp_path / "a.svg").read_text()
        assert len(set(circles(a))) == 1
        assert a == (tmp_path / "b.svg").read_text()

    def test_unknown_column(self, tmp_path, capsys):
        csv = self.write(tmp_path, "x,y\n0,0\n")
        assert run("plot", csv, "--x", "x", "--y", "z", "--out", tmp_path / "p.svg") == 2
        assert "UnknownColumn" in capsys.readouterr().err
        assert not (tmp_path / "p.svg").exists()


def test_cube_info(tmp_path, capsys):
    assert run("synth", "--figure", "veg", "--lines", 4, "--samples", 4, "--out", tmp_path / "c.img") == 0
    capsys.readouterr()
    assert run("cube-info", tmp_path / "c.hdr", "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["bands"] == 224 and info["retained_bands"] == 107 and info["data_type"] == "int16"
