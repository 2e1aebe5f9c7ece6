import json
import subprocess
import sys

import numpy as np
import pytest

from gifs.cli import main
from gifs.config import config_to_dict, dump_config, load_config, parse_config
from gifs.errors import UsageError
from gifs.geometry import CompactSetApprox, hausdorff, interval_grid, read_cloud
from gifs.render import decode_pgm, encode_pgm, pixel_indices, rasterize


def conn_dict(**over):
    d = {
        "dimension": 1,
        "order": 2,
        "maps": [{"matrices": [[[0.25]], [[0.25]]], "offset": [0.0]},
                 {"matrices": [[[0.25]], [[0.25]]], "offset": [0.5]}],
        "phi": {"kind": "linear", "rate": 0.5},
        "iteration": {"tol": 1e-4, "max_iter": 200, "cell": 1e-3},
        "seed": 0,
    }
    d.update(over)
    return d


def write_cfg(tmp_path, d, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


class TestConfig:
    def test_shipped_configs_load(self, configs_dir):
        for name in ("s_conn.json", "s_disc.json", "sierpinski.json"):
            cfg = load_config(configs_dir / name)
            assert cfg.gifs().certified

    def test_round_trip(self, configs_dir):
        for name in ("s_conn.json", "sierpinski.json"):
            cfg = load_config(configs_dir / name)
            assert parse_config(dump_config(cfg)) == cfg
            assert config_to_dict(parse_config(json.dumps(config_to_dict(cfg)))) == config_to_dict(cfg)

    def test_nan_rejected(self):
        text = json.dumps(conn_dict()).replace('"rate": 0.5', '"rate": NaN')
        with pytest.raises(UsageError):
            parse_config(text)

    def test_syntax_error_location(self):
        with pytest.raises(UsageError, match="line"):
            parse_config('{"dimension": 1,\n "order": }')

    def test_shape_error_names_field(self):
        d = conn_dict()
        d["maps"][0]["matrices"] = [[[0.25]]]
        with pytest.raises(UsageError, match=r"maps\[0\]\.matrices"):
            parse_config(json.dumps(d))

    def test_unknown_key(self):
        with pytest.raises(UsageError):
            parse_config(json.dumps(conn_dict(colour="red")))

    def test_bad_phi(self):
        with pytest.raises(UsageError):
            parse_config(json.dumps(conn_dict(phi={"kind": "linear", "rate": 1.5})))
        with pytest.raises(UsageError):
            parse_config(json.dumps(conn_dict(phi={"kind": "cubic"})))

    def test_seed_streams_distinct(self):
        cfg = parse_config(json.dumps(conn_dict()))
        seeds = {cfg.stream_seed(s) for s in range(4)}
        assert len(seeds) == 4
        assert cfg.stream_seed(1) == parse_config(json.dumps(conn_dict())).stream_seed(1)
        assert cfg.with_seed(7).stream_seed(1) != cfg.stream_seed(1)

    def test_default_seed_is_origin(self):
        cfg = parse_config(json.dumps(conn_dict()))
        assert cfg.seeds().points.tolist() == [[0.0]]


class TestRender:
    def test_pixel_formula(self):
        cols, rows = pixel_indices(np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.25]]), (0, 0), (1, 1), 4, 4)
        assert cols.tolist() == [0, 3, 2]
        assert rows.tolist() == [3, 0, 2]

    def test_empty_window_is_white(self):
        img = rasterize(CompactSetApprox([[5.0, 5.0]]), (0, 0), (1, 1), 8, 8)
        assert np.all(img == 255)

    def test_single_point(self):
        img = rasterize(CompactSetApprox([[0.5, 0.5]]), (0, 0), (1, 1), 9, 9)
        assert (img == 0).sum() == 1 and img[4, 4] == 0

    def test_pgm_round_trip(self):
        img = rasterize(CompactSetApprox(np.random.default_rng(0).uniform(0, 1, (50, 2))), (0, 0), (1, 1), 16, 12)
        data = encode_pgm(img, (0, 0), (1, 1))
        assert data.startswith(b"P5\n")
        assert np.array_equal(decode_pgm(data), img)

    def test_rejects(self):
        with pytest.raises(UsageError):
            rasterize(CompactSetApprox([[0.0]]), (0,), (1,), 4, 4)
        with pytest.raises(UsageError):
            rasterize(CompactSetApprox([[0.0, 0.0]]), (0, 0), (0, 1), 4, 4)


class TestCommands:
    def test_attractor(self, configs_dir, tmp_path, capsys):
        assert main(["attractor", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out.split()
        assert [p.rsplit("/", 1)[-1] for p in out] == ["attractor.csv", "attractor_report.txt",
                                                        "attractor_timing.txt"]
        cloud = read_cloud(tmp_path / "attractor.csv")
        assert hausdorff(cloud, interval_grid(0, 1, 1e-3)) <= 2e-3 + 1e-4
        report = dict(line.split("=") for line in (tmp_path / "attractor_report.txt").read_text().splitlines())
        assert report["converged"] == "true" and float(report["residual"]) <= 1e-4

    def test_attractor_deterministic(self, configs_dir, tmp_path):
        outs = []
        for k in range(2):
            d = tmp_path / str(k)
            assert main(["attractor", "--config", str(configs_dir / "s_disc.json"), "--out", str(d)]) == 0
            outs.append(((d / "attractor.csv").read_bytes(), (d / "attractor_report.txt").read_bytes()))
        assert outs[0] == outs[1]

    def test_connect(self, configs_dir, tmp_path):
        assert main(["connect", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "verdict.txt").read_text() == "CONNECTED\n"
        assert main(["connect", "--config", str(configs_dir / "s_disc.json"), "--out", str(tmp_path)]) == 0
        line = (tmp_path / "verdict.txt").read_text()
        assert line.startswith("DISCONNECTED gap=") and 0.30 <= float(line.split("=")[1]) <= 0.36

    def test_code(self, configs_dir, tmp_path):
        assert main(["code", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path),
                     "--code", "|pad=2"]) == 0
        rows = dict(line.split("=", 1) for line in (tmp_path / "code.txt").read_text().splitlines())
        assert rows["depth"] == "20"
        assert abs(float(rows["point"]) - 1) <= float(rows["bound"])

    def test_arc(self, configs_dir, tmp_path):
        assert main(["arc", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path),
                     "--x-code", "|pad=1", "--y-code", "|pad=2", "--depth", "3"]) == 0
        lines = (tmp_path / "arc.csv").read_text().splitlines()
        assert lines[0].startswith("# level=3")
        ys = [float(r.split(",")[0]) for r in lines[1:]]
        assert ys[0] == 0 and ys[-1] == 1 and ys == sorted(ys)

    def test_arc_disconnected_exit(self, configs_dir, tmp_path, capsys):
        code = main(["arc", "--config", str(configs_dir / "s_disc.json"), "--out", str(tmp_path),
                     "--x-code", "|pad=1", "--y-code", "|pad=2"])
        assert code == 5
        assert "DisconnectionError" in capsys.readouterr().err

    def test_render_deterministic(self, configs_dir, tmp_path):
        blobs = []
        for k in range(2):
            d = tmp_path / str(k)
            assert main(["render", "--config", str(configs_dir / "sierpinski.json"), "--out", str(d)]) == 0
            blobs.append((d / "attractor.pgm").read_bytes())
        assert blobs[0] == blobs[1]
        img = decode_pgm(blobs[0])
        assert img.shape == (256, 256) and (img == 0).any() and (img == 255).any()

    def test_render_1d_is_usage_error(self, configs_dir, tmp_path):
        assert main(["render", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path)]) == 2

    def test_render_from_cloud(self, tmp_path):
        cfg = write_cfg(tmp_path, {
            "dimension": 2, "order": 1,
            "maps": [{"matrices": [[[0.5, 0], [0, 0.5]]], "offset": [0, 0]}],
            "phi": {"kind": "linear", "rate": 0.5},
            "render": {"lo": [0, 0], "hi": [1, 1], "width": 9, "height": 9},
        })
        cloud = tmp_path / "c.csv"
        cloud.write_text("# d=2 h=0\n0.5,0.5\n")
        assert main(["render", "--config", cfg, "--out", str(tmp_path), "--cloud", str(cloud)]) == 0
        img = decode_pgm((tmp_path / "attractor.pgm").read_bytes())
        assert (img == 0).sum() == 1

    def test_missing_config(self, tmp_path):
        assert main(["attractor", "--config", str(tmp_path / "nope.json")]) == 2

    def test_bad_seed(self, configs_dir, tmp_path):
        assert main(["attractor", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path),
                     "--seed", "-1"]) == 2

    def test_divergence_exit(self, tmp_path):
        cfg = write_cfg(tmp_path, conn_dict(maps=[{"matrices": [[[1.0]], [[1.0]]], "offset": [1.0]}],
                                            iteration={"tol": 1e-4, "max_iter": 60, "cell": 1e-3}))
        assert main(["attractor", "--config", cfg, "--out", str(tmp_path)]) == 4

    def test_verify_pass(self, configs_dir, tmp_path):
        assert main(["verify", "--config", str(configs_dir / "s_conn.json"), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "verify.txt").read_text().splitlines()
        assert lines and all(line.startswith("PASS ") for line in lines)

    def test_verify_catches_wrong_rate(self, tmp_path):
        cfg = write_cfg(tmp_path, conn_dict(phi={"kind": "linear", "rate": 0.4}))
        assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 1
        lines = (tmp_path / "verify.txt").read_text().splitlines()
        assert any(line.startswith("FAIL core.contraction") for line in lines)

    def test_module_entry_point(self, configs_dir, tmp_path):
        res = subprocess.run([sys.executable, "-m", "gifs", "code", "--config", str(configs_dir / "s_conn.json"),
                              "--out", str(tmp_path), "--code", "1;(1,1)|pad=1", "--depth", "5"],
                             capture_output=True, text=True)
        assert res.returncode == 0
        assert res.stdout.strip().endswith("code.txt")
