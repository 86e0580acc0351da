"""End-to-end command-line workflows, exit codes, and file hygiene."""

import subprocess
import sys

import pytest

from inml.cli import main
from inml.compiler import parse_dataset, parse_model, parse_table_entries
from inml.fixedpoint import FixedPointFormat, decode
from inml.wire import decode_packet, read_frames

MODEL_TEXT = """\
model 1 scale=16
layer 0 in=2 out=1 act=linear
w 0 0 0.5
w 0 1 0.25
b 0 0.5
"""

SIGMOID_TEXT = """\
model 2 scale=16
layer 0 in=1 out=1 act=sigmoid:3
w 0 0 0.5
b 0 0.1
"""


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "m.model"
    path.write_text(MODEL_TEXT)
    return path


@pytest.fixture
def line_csv(tmp_path):
    path = tmp_path / "line.csv"
    rows = ["x0,y0"] + [f"{x},{2 * x + 1}" for x in (0.0, 0.5, 1.0, 1.5, 2.0)]
    path.write_text("\n".join(rows) + "\n")
    return path


class TestFit:
    def test_recovers_a_line(self, tmp_path, line_csv):
        out = tmp_path / "fit.model"
        assert main(["fit", "--data", str(line_csv), "--out", str(out)]) == 0
        spec = parse_model(out.read_text())
        assert spec.layers[0].weights[0][0] == pytest.approx(2.0, abs=1e-9)
        assert spec.layers[0].biases[0] == pytest.approx(1.0, abs=1e-9)
        assert spec.scale_bits == 16

    def test_scale_and_id_flags(self, tmp_path, line_csv):
        out = tmp_path / "fit.model"
        code = main([
            "fit", "--data", str(line_csv), "--out", str(out),
            "--scale", "8", "--model-id", "77",
        ])
        assert code == 0
        spec = parse_model(out.read_text())
        assert spec.scale_bits == 8
        assert spec.model_id == 77

    def test_reruns_are_byte_identical(self, tmp_path, line_csv):
        a, b = tmp_path / "a.model", tmp_path / "b.model"
        main(["fit", "--data", str(line_csv), "--out", str(a)])
        main(["fit", "--data", str(line_csv), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestQuantize:
    def test_writes_canonical_entries(self, tmp_path, model_file):
        out = tmp_path / "t.tables"
        assert main(["quantize", "--model", str(model_file), "--out", str(out)]) == 0
        assert out.read_text() == (
            "M 1 16 1 2 1 linear\n"
            "W 1 0 0 0 32768\n"
            "W 1 0 0 1 16384\n"
            "B 1 0 0 32768\n"
        )

    def test_scale_override(self, tmp_path, model_file):
        out = tmp_path / "t.tables"
        main(["quantize", "--model", str(model_file), "--out", str(out), "--scale", "8"])
        entries = parse_table_entries(out.read_text())[1]
        assert entries.meta.scale_bits == 8
        assert entries.weights[(1, 0, 0, 0)] == 128


class TestEmitTables:
    def test_canonicalizes_shuffled_input(self, tmp_path):
        messy = tmp_path / "messy.tables"
        messy.write_text(
            "B 1 0 0 32768\nW 1 0 0 1 16384\n# comment\n"
            "M 1 16 1 2 1 linear\nW 1 0 0 0 32768\n"
        )
        out = tmp_path / "clean.tables"
        assert main(["emit-tables", "--tables", str(messy), "--out", str(out)]) == 0
        assert out.read_text().splitlines()[0] == "M 1 16 1 2 1 linear"

    def test_merges_disjoint_files(self, tmp_path, model_file):
        t1 = tmp_path / "a.tables"
        main(["quantize", "--model", str(model_file), "--out", str(t1)])
        other = tmp_path / "other.model"
        other.write_text(SIGMOID_TEXT)
        t2 = tmp_path / "b.tables"
        main(["quantize", "--model", str(other), "--out", str(t2)])
        out = tmp_path / "merged.tables"
        code = main(["emit-tables", "--tables", str(t1), "--tables", str(t2), "--out", str(out)])
        assert code == 0
        assert set(parse_table_entries(out.read_text())) == {1, 2}

    def test_same_model_twice_is_a_data_error(self, tmp_path, model_file, capsys):
        t1 = tmp_path / "a.tables"
        main(["quantize", "--model", str(model_file), "--out", str(t1)])
        out = tmp_path / "merged.tables"
        code = main(["emit-tables", "--tables", str(t1), "--tables", str(t1), "--out", str(out)])
        assert code == 2
        assert "more than one table file" in capsys.readouterr().err
        assert not out.exists()


class TestPipelineWorkflow:
    def run_flow(self, tmp_path, model_file, n=25):
        tables = tmp_path / "t.tables"
        traffic = tmp_path / "in.frames"
        results = tmp_path / "out.frames"
        stats = tmp_path / "stats.csv"
        assert main(["quantize", "--model", str(model_file), "--out", str(tables)]) == 0
        assert main([
            "gen-traffic", "--model", str(model_file), "--count", str(n),
            "--out", str(traffic), "--seed", "11",
        ]) == 0
        assert main([
            "run", "--tables", str(tables), "--in", str(traffic),
            "--out", str(results), "--stats", str(stats), "--trace",
        ]) == 0
        return tables, traffic, results, stats

    def test_full_chain(self, tmp_path, model_file):
        _, traffic, results, stats = self.run_flow(tmp_path, model_file)
        frames = read_frames(results.read_bytes())
        assert len(frames) == 25
        fmt = FixedPointFormat(16)
        reqs = [decode_packet(f) for f in read_frames(traffic.read_bytes())]
        for req, frame in zip(reqs, frames):
            res = decode_packet(frame)
            want = 0.5 * decode(req.features[0], fmt) + 0.25 * decode(req.features[1], fmt) + 0.5
            assert decode(res.outputs[0], fmt) == pytest.approx(want, abs=2e-4)

    def test_stats_file_formats(self, tmp_path, model_file):
        *_, stats = self.run_flow(tmp_path, model_file)
        header, row, _ = stats.read_text().split("\n")
        assert header.startswith("packets_in,packets_out")
        assert row.startswith("25,25")
        assert "op.TABLE_LOOKUP" in header

        kv = tmp_path / "stats.txt"
        tables = tmp_path / "t.tables"
        traffic = tmp_path / "in.frames"
        out2 = tmp_path / "out2.frames"
        main(["run", "--tables", str(tables), "--in", str(traffic),
              "--out", str(out2), "--stats", str(kv)])
        assert "packets_in=25" in kv.read_text()

    def test_reruns_are_byte_identical(self, tmp_path, model_file):
        _, traffic, results, _ = self.run_flow(tmp_path, model_file)
        first = (traffic.read_bytes(), results.read_bytes())
        _, traffic2, results2, _ = self.run_flow(tmp_path, model_file)
        assert (traffic2.read_bytes(), results2.read_bytes()) == first

    def test_trace_prints_whitelisted_tags(self, tmp_path, model_file, capsys):
        tables, traffic, *_ = self.run_flow(tmp_path, model_file)
        code = main(["trace", "--tables", str(tables), "--in", str(traffic), "--index", "3"])
        assert code == 0
        tags = capsys.readouterr().out.strip().splitlines()
        assert tags.count("TABLE_LOOKUP") == 4
        assert set(tags) <= {"TABLE_LOOKUP", "ADD", "SUB", "MUL", "SHIFT", "COMPARE", "SELECT"}

    def test_trace_index_out_of_range(self, tmp_path, model_file, capsys):
        tables, traffic, *_ = self.run_flow(tmp_path, model_file)
        code = main(["trace", "--tables", str(tables), "--in", str(traffic), "--index", "99"])
        assert code == 2
        assert "out of range" in capsys.readouterr().err


class TestEvalCommands:
    def test_mse_vs_bits_synthetic_default(self, tmp_path, model_file, capsys):
        out = tmp_path / "bits.csv"
        code = main([
            "eval", "mse-vs-bits", "--model", str(model_file), "--out", str(out),
            "--verbose",
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "frac_bits,normalized_mse,n,seed"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [4, 8, 12, 16]
        assert "synthesizing" in capsys.readouterr().err

    def test_mse_vs_bits_with_dataset(self, tmp_path, model_file):
        data = tmp_path / "d.csv"
        rows = ["x0,x1,y0"] + [f"0.{i},0.{9 - i},1.0" for i in range(10)]
        data.write_text("\n".join(rows) + "\n")
        out = tmp_path / "bits.csv"
        code = main([
            "eval", "mse-vs-bits", "--model", str(model_file),
            "--data", str(data), "--bits", "8,16", "--out", str(out),
        ])
        assert code == 0
        assert len(out.read_text().splitlines()) == 3

    def test_mse_vs_order(self, tmp_path):
        model = tmp_path / "s.model"
        model.write_text(SIGMOID_TEXT)
        out = tmp_path / "order.csv"
        code = main(["eval", "mse-vs-order", "--model", str(model), "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "taylor_order,normalized_mse,n,seed"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 3, 5]

    def test_mse_vs_order_rejects_pure_linear(self, tmp_path, model_file, capsys):
        out = tmp_path / "order.csv"
        code = main(["eval", "mse-vs-order", "--model", str(model_file), "--out", str(out)])
        assert code == 2
        assert "no sigmoid layer" in capsys.readouterr().err
        assert not out.exists()

    def test_throughput_default_grid(self, tmp_path):
        out = tmp_path / "tput.csv"
        assert main(["eval", "throughput", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "overhead_bits,throughput_gbps,sim_pkts_per_sec"
        grid = [int(l.split(",")[0]) for l in lines[1:]]
        assert grid == [32, 64, 128, 256, 512, 1024, 2048, 4096]
        gbps = [float(l.split(",")[1]) for l in lines[1:]]
        assert gbps == sorted(gbps, reverse=True)

    def test_throughput_custom_rate(self, tmp_path):
        out = tmp_path / "tput.csv"
        code = main([
            "eval", "throughput", "--overheads", "0", "--line-rate-gbps", "10",
            "--out", str(out),
        ])
        assert code == 0
        value = float(out.read_text().splitlines()[1].split(",")[1])
        assert value == pytest.approx(10.0 * 1500 / 1507)


class TestExitCodes:
    def test_usage_errors_exit_one(self, tmp_path):
        assert main([]) == 1
        assert main(["frobnicate"]) == 1
        assert main(["fit", "--data"]) == 1
        assert main(["quantize", "--model", "m", "--out", "o", "--scale", "99"]) == 1
        assert main(["eval"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "usage" in capsys.readouterr().out

    def test_missing_input_exits_two(self, tmp_path, capsys):
        out = tmp_path / "x.tables"
        code = main(["quantize", "--model", str(tmp_path / "nope.model"), "--out", str(out)])
        assert code == 2
        assert "no such file" in capsys.readouterr().err

    def test_missing_output_directory_exits_two(self, tmp_path, model_file):
        out = tmp_path / "never" / "x.tables"
        assert main(["quantize", "--model", str(model_file), "--out", str(out)]) == 2

    def test_bad_model_content_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.model"
        bad.write_text("model 1 scale=16\nlayer 0 in=1 out=1 act=martini\n")
        out = tmp_path / "x.tables"
        code = main(["quantize", "--model", str(bad), "--out", str(out)])
        assert code == 2
        assert "line 2" in capsys.readouterr().err

    def test_bad_dataset_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,y0\n1.0,oops\n")
        out = tmp_path / "fit.model"
        assert main(["fit", "--data", str(bad), "--out", str(out)]) == 2
        assert "non-numeric" in capsys.readouterr().err

    def test_failed_command_leaves_no_output_file(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,y0\n1.0\n")
        out = tmp_path / "fit.model"
        assert main(["fit", "--data", str(bad), "--out", str(out)]) == 2
        assert not out.exists()
        assert list(tmp_path.glob(".inml-tmp-*")) == []

    def test_oversized_weight_exits_two(self, tmp_path, capsys):
        model = tmp_path / "big.model"
        model.write_text(
            "model 1 scale=16\nlayer 0 in=1 out=1 act=linear\nw 0 0 40000.0\n"
        )
        out = tmp_path / "x.tables"
        assert main(["quantize", "--model", str(model), "--out", str(out)]) == 2
        assert "does not fit" in capsys.readouterr().err


class TestInstalledEntryPoint:
    def test_module_invocation(self, tmp_path, model_file):
        out = tmp_path / "t.tables"
        proc = subprocess.run(
            [sys.executable, "-m", "inml.cli", "quantize",
             "--model", str(model_file), "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert out.exists()
