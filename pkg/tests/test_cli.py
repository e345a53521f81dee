import os

import pytest

from lcfi.cli import main
from lcfi.traces import read_trace

from conftest import fixture_path

TRIPLE = "n[0]: 4.000000\nn[1]: 3.000000\nn[2]: 3.000000\n"
SEP = "+" * 24 + "\n"
GOLDEN_STDOUT = TRIPLE + SEP + TRIPLE + SEP + TRIPLE


class TestInstrument:
    def test_emits_artifacts(self, tmp_path, capsys):
        rc = main(["instrument", fixture_path("demo.ll"),
                   "--input", fixture_path("demo_input.yaml"),
                   "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "targets: [15] scope: invocation k=[3]" in out
        for suffix in ("-lcfi_index.ll", "-lcfi_profiling.ll", "-lcfi_fi.ll"):
            path = str(tmp_path / ("demo" + suffix))
            assert path in out
            assert os.path.isfile(path)

    def test_missing_input_config(self, tmp_path, capsys):
        rc = main(["instrument", fixture_path("demo.ll"),
                   "--input", str(tmp_path / "nope.yaml")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_program(self, tmp_path, capsys):
        bad = tmp_path / "bad.ll"
        bad.write_text("define i32 @main() {\n  br label %ghost\n}\n")
        rc = main(["instrument", str(bad),
                   "--input", fixture_path("demo_input.yaml")])
        captured = capsys.readouterr()
        assert rc == 2
        assert "ghost" in captured.err


class TestProfile:
    def test_golden_run(self, tmp_path, capsys):
        trace_out = tmp_path / "golden.txt"
        rc = main(["profile", fixture_path("demo.ll"),
                   "--file", "in.txt=" + fixture_path("in.txt"),
                   "--trace-out", str(trace_out)])
        captured = capsys.readouterr()
        assert rc == 0
        assert captured.out == GOLDEN_STDOUT
        assert "return value: 0" in captured.err
        recs = read_trace(str(trace_out))
        assert any(r.index == 15 for r in recs)

    def test_trap_exits_nonzero(self, capsys):
        rc = main(["profile", fixture_path("crasher.ll")])
        captured = capsys.readouterr()
        assert rc == 1
        assert "run did not complete: out_of_bounds" in captured.err


class TestInject:
    def test_seeded_run(self, capsys):
        rc = main(["inject", fixture_path("demo.ll"),
                   "--input", fixture_path("demo_input.yaml"),
                   "--seed", "77",
                   "--file", "in.txt=" + fixture_path("in.txt")])
        captured = capsys.readouterr()
        assert rc == 0
        assert "status: ok" in captured.err
        assert "activations: 3" in captured.err
        assert "seed: 77" in captured.err
        # first two invocations untouched, third carries the fault
        assert captured.out != GOLDEN_STDOUT
        assert captured.out.startswith(TRIPLE + SEP + TRIPLE + SEP)

    def test_seed_defaults_to_config(self, capsys):
        rc = main(["inject", fixture_path("demo.ll"),
                   "--input", fixture_path("demo_input.yaml"),
                   "--file", "in.txt=" + fixture_path("in.txt")])
        assert rc == 0
        assert "seed: 2025" in capsys.readouterr().err


class TestCampaign:
    def _config(self, tmp_path, runs=3):
        cfg = tmp_path / "campaign.yaml"
        cfg.write_text(
            f"program: {fixture_path('demo.ll')}\n"
            f"input: {fixture_path('demo_input.yaml')}\n"
            f"runs: {runs}\n"
            f"output_dir: {tmp_path / 'out'}\n"
            "io:\n"
            f"  files:\n    in.txt: {{from: {fixture_path('in.txt')}}}\n")
        return str(cfg)

    def test_end_to_end(self, tmp_path, capsys):
        rc = main(["campaign", "--config", self._config(tmp_path)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "3 runs ->" in out
        assert "sdc: 3" in out
        for line in out.splitlines()[1:]:
            assert os.path.isfile(line)

    def test_golden_failure_exit_code(self, tmp_path, capsys):
        prog = tmp_path / "trap.ll"
        prog.write_text(
            "define i32 @f(i32* %p) {\n"
            "  %v = load i32, i32* %p\n  ret i32 %v\n}\n"
            "define i32 @main() {\n"
            "  %s = alloca i32\n  store i32 5, i32* %s\n"
            "  %r = call i32 @f(i32* %s)\n"
            "  %d = sdiv i32 1, 0\n  ret i32 %d\n}\n")
        inp = tmp_path / "in.yaml"
        inp.write_text("fi_type: uniform_abs(1.0)\noption:\n"
                       "  - function_name: f\n    variable_name: p\n"
                       "    variable_location: 1\n")
        cfg = tmp_path / "c.yaml"
        cfg.write_text(f"program: {prog}\ninput: {inp}\n"
                       f"output_dir: {tmp_path / 'out'}\n")
        rc = main(["campaign", "--config", str(cfg)])
        captured = capsys.readouterr()
        assert rc == 3
        assert "golden run did not complete" in captured.err

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(f"program: {fixture_path('demo.ll')}\n")
        rc = main(["campaign", "--config", str(cfg)])
        captured = capsys.readouterr()
        assert rc == 4
        assert "input is required" in captured.err

    def test_jobs_override(self, tmp_path, capsys):
        rc = main(["campaign", "--config", self._config(tmp_path, runs=2),
                   "--jobs", "2"])
        assert rc == 0
        assert "2 runs ->" in capsys.readouterr().out


class TestTraceDiff:
    def test_identical(self, capsys):
        rc = main(["trace", "diff", fixture_path("trace_golden.txt"),
                   fixture_path("trace_golden.txt")])
        captured = capsys.readouterr()
        assert rc == 0
        assert "traces are identical" in captured.out

    def test_divergence(self, capsys):
        rc = main(["trace", "diff", fixture_path("trace_golden.txt"),
                   fixture_path("trace_faulty.txt")])
        captured = capsys.readouterr()
        assert rc == 1
        assert "classification: control_flow" in captured.out
        assert "first divergence:" in captured.out

    def test_verbose_lists_each(self, capsys):
        main(["trace", "diff", "-v", fixture_path("trace_golden.txt"),
              fixture_path("trace_faulty.txt")])
        out = capsys.readouterr().out
        assert out.count("\n  ") >= 2

    def test_malformed_trace(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("not a trace record\n")
        rc = main(["trace", "diff", str(bad), str(bad)])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["trace", "diff", str(tmp_path / "a.txt"),
                   str(tmp_path / "b.txt")])
        assert rc == 2


class TestTraceUnion:
    def test_union_table(self, capsys):
        rc = main(["trace", "union", fixture_path("trace_golden.txt"),
                   fixture_path("trace_faulty.txt")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "distinct values" in out.splitlines()[0]
        assert any(line.split()[:1] == ["18"] for line in out.splitlines()[1:])


class TestTraceDot:
    def test_dot_to_stdout(self, capsys):
        rc = main(["trace", "dot", fixture_path("trace_golden.txt"),
                   fixture_path("trace_faulty.txt"),
                   "--program", fixture_path("demo.ll")])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith('digraph "demo.ll"')

    def test_dot_to_file(self, tmp_path, capsys):
        dest = tmp_path / "g.dot"
        rc = main(["trace", "dot", fixture_path("trace_golden.txt"),
                   fixture_path("trace_faulty.txt"),
                   "--program", fixture_path("demo.ll"),
                   "--out", str(dest)])
        assert rc == 0
        assert str(dest) in capsys.readouterr().out
        assert dest.read_text().startswith("digraph")


def test_no_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
