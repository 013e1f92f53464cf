"""Command-line surface: flag parsing, subcommands, exit codes, pipeline."""

import json
import os

import numpy as np
import pytest

from alsx.cli import build_hyperparams, main, parse_args
from alsx.sparse import load_edge_list


class TestParseArgs:
    def test_train_flags_become_hyperparams(self):
        cfg = parse_args(["train", "--data", "g.tsv", "--d", "128", "--epochs", "16"])
        assert cfg.hp.dim == 128 and cfg.hp.epochs == 16

    def test_tuned_pair_flags(self):
        cfg = parse_args(
            ["train", "--data", "g.tsv", "--lambda", "5e-2", "--alpha", "1e-6"]
        )
        assert cfg.hp.reg == pytest.approx(5e-2)
        assert cfg.hp.alpha == pytest.approx(1e-6)

    def test_no_args_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            parse_args([])
        assert exc_info.value.code == 2

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as exc_info:
            parse_args(["train", "--data", "g.tsv", "--bogus", "3"])
        assert exc_info.value.code == 2

    def test_bad_enum_value_rejected(self):
        with pytest.raises(SystemExit) as exc_info:
            parse_args(["train", "--data", "g.tsv", "--solver", "gauss"])
        assert exc_info.value.code == 2

    def test_grid_expansion(self):
        cfg = parse_args(
            ["train", "--data", "g.tsv", "--grid-lambda", "0.1,0.01",
             "--grid-alpha", "1e-3,1e-4,1e-5"]
        )
        assert len(cfg.grid) == 6
        assert cfg.grid[0] == (0.1, 1e-3)

    def test_config_file_with_flag_override(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("d=32\nlambda=0.5\nsolver=qr\n")
        cfg = parse_args(
            ["train", "--data", "g.tsv", "--config", str(conf), "--d", "64"]
        )
        assert cfg.hp.dim == 64  # flag beats config
        assert cfg.hp.reg == 0.5  # config beats default
        assert cfg.hp.solver == "qr"

    def test_config_unknown_key_is_usage_error(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("banana=1\n")
        args = parse_args(["train", "--data", "g.tsv"]).args
        args.config = str(conf)
        assert main(["train", "--data", "g.tsv", "--config", str(conf)]) == 2

    def test_eval_k_list(self):
        cfg = parse_args(
            ["eval", "--checkpoint", "c", "--inputs", "a", "--truth", "b",
             "--k", "5,10"]
        )
        assert cfg.ks == (5, 10)

    def test_default_k_list(self):
        cfg = parse_args(["eval", "--checkpoint", "c", "--inputs", "a", "--truth", "b"])
        assert cfg.ks == (20, 50)

    def test_bf16_demo_via_config(self, tmp_path):
        conf = tmp_path / "demo.conf"
        conf.write_text("precision=bf16_storage\nbf16-solve-inputs=true\n")
        cfg = parse_args(["train", "--data", "g.tsv", "--config", str(conf)])
        assert cfg.hp.precision == "bf16_storage"
        assert cfg.hp.bf16_solve_inputs is True


class TestHyperparamDefaults:
    def test_defaults(self):
        hp = build_hyperparams(parse_args(["train", "--data", "g"]).args)
        assert hp.dim == 128 and hp.epochs == 16
        assert hp.row_len == 8 and hp.solver == "cg"


class TestSubcommands:
    def test_synth_then_split_files(self, tmp_path):
        data = tmp_path / "g.tsv"
        assert main(["synth", "--rows", "30", "--cols", "40", "--rank", "3",
                     "--nnz", "6", "--out", str(data)]) == 0
        m = load_edge_list(str(data))
        assert (m.num_rows, m.num_cols, m.nnz) == (30, 40, 180)

        prefix = str(tmp_path / "s")
        assert main(["split", "--data", str(data), "--out", prefix]) == 0
        train_m = load_edge_list(prefix + ".train")
        inputs_m = load_edge_list(prefix + ".inputs")
        truth_m = load_edge_list(prefix + ".truth")
        assert train_m.nnz + inputs_m.nnz + truth_m.nnz == 180
        assert train_m.num_rows == 30 and truth_m.num_cols == 40

    def test_bench_csv(self, tmp_path, capsys):
        assert main(["bench-solvers", "--dims", "1,2", "--trials", "1"]) == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert lines[0] == "backend,d,trials,mean_seconds,stddev_seconds"
        assert len(lines) == 1 + 8

    def test_missing_data_file_is_data_error(self, tmp_path, capsys):
        missing = str(tmp_path / "absent.tsv")
        assert main(["train", "--data", missing, "--epochs", "1"]) == 3

    def test_eval_dims_mismatch_is_data_error(self, tmp_path, capsys):
        data = tmp_path / "g.tsv"
        main(["synth", "--rows", "20", "--cols", "25", "--rank", "2", "--nnz", "4",
              "--out", str(data)])
        ckpt = str(tmp_path / "model")
        main(["train", "--data", str(data), "--d", "4", "--epochs", "1",
              "--lambda", "0.05", "--alpha", "0.01", "--solver", "lu",
              "--out", ckpt, "--log", str(tmp_path / "m.jsonl")])
        wrong = tmp_path / "wrong.tsv"
        wrong.write_text("#dims 20 99\n0\t1\n")
        assert main(["eval", "--checkpoint", ckpt, "--inputs", str(wrong),
                     "--truth", str(wrong)]) == 3

    def test_numerical_error_exit_code(self, tmp_path, capsys):
        data = tmp_path / "g.tsv"
        data.write_text("0\t1\n1\t2\n2\t0\n")
        code = main(["train", "--data", str(data), "--d", "3", "--epochs", "1",
                     "--lambda", "0", "--alpha", "0", "--solver", "cholesky"])
        assert code == 4

    def test_end_to_end_pipeline(self, tmp_path, capsys):
        data = tmp_path / "g.tsv"
        prefix = str(tmp_path / "s")
        ckpt = str(tmp_path / "model")
        report_path = str(tmp_path / "report.json")

        assert main(["synth", "--rows", "120", "--cols", "150", "--rank", "4",
                     "--nnz", "10", "--seed", "5", "--out", str(data)]) == 0
        assert main(["split", "--data", str(data), "--out", prefix, "--seed", "5"]) == 0
        assert main(["train", "--data", prefix + ".train", "--out", ckpt,
                     "--d", "8", "--epochs", "4", "--lambda", "0.05",
                     "--alpha", "0.002", "--solver", "cholesky", "--shards", "2",
                     "--batch-rows", "64", "--dense-row-len", "4",
                     "--log", str(tmp_path / "metrics.jsonl")]) == 0
        assert main(["eval", "--checkpoint", ckpt, "--inputs", prefix + ".inputs",
                     "--truth", prefix + ".truth", "--k", "10,20",
                     "--lambda", "0.05", "--alpha", "0.002", "--solver", "cholesky",
                     "--out", report_path]) == 0

        report = json.loads(open(report_path).read())
        assert set(report["recall_at"]) == {"10", "20"}
        assert 0.0 <= report["recall_at"]["10"] <= 1.0

        metrics = [json.loads(line) for line in open(tmp_path / "metrics.jsonl")]
        assert len(metrics) == 8
        assert all("objective" in rec for rec in metrics)
        assert os.path.exists(os.path.join(ckpt, "users.ckpt"))

    def test_metrics_stream_to_stdout(self, tmp_path, capsys):
        data = tmp_path / "g.tsv"
        main(["synth", "--rows", "20", "--cols", "25", "--rank", "2", "--nnz", "4",
              "--out", str(data)])
        capsys.readouterr()
        assert main(["train", "--data", str(data), "--d", "4", "--epochs", "1",
                     "--lambda", "0.05", "--alpha", "0.01", "--solver", "lu"]) == 0
        lines = [ln for ln in capsys.readouterr().out.strip().split("\n") if ln]
        parsed = [json.loads(ln) for ln in lines]
        assert len(parsed) == 2
        assert {rec["side"] for rec in parsed} == {"users", "items"}

    def test_grid_writes_one_metrics_file_per_cell(self, tmp_path):
        data = tmp_path / "g.tsv"
        main(["synth", "--rows", "20", "--cols", "25", "--rank", "2", "--nnz", "4",
              "--out", str(data)])
        log_base = str(tmp_path / "cell.jsonl")
        assert main(["train", "--data", str(data), "--d", "4", "--epochs", "1",
                     "--solver", "lu", "--grid-lambda", "0.1,0.01",
                     "--grid-alpha", "0.001", "--log", log_base]) == 0
        cells = [p for p in os.listdir(tmp_path) if p.startswith("cell.jsonl-")]
        assert len(cells) == 2

    def test_shard_flag_changes_nothing_material(self, tmp_path):
        # same seed, 1 vs 4 workers: final objective agrees closely
        data = tmp_path / "g.tsv"
        main(["synth", "--rows", "60", "--cols", "80", "--rank", "3", "--nnz", "8",
              "--seed", "2", "--out", str(data)])
        objs = {}
        for shards in ("1", "4"):
            log = tmp_path / f"m{shards}.jsonl"
            assert main(["train", "--data", str(data), "--d", "6", "--epochs", "2",
                         "--lambda", "0.05", "--alpha", "0.002", "--solver", "cholesky",
                         "--seed", "7", "--shards", shards, "--log", str(log)]) == 0
            objs[shards] = json.loads(open(log).readlines()[-1])["objective"]
        assert objs["1"] == pytest.approx(objs["4"], rel=1e-4)


class TestAtomicity:
    def test_checkpoint_dir_has_no_partials(self, tmp_path):
        data = tmp_path / "g.tsv"
        main(["synth", "--rows", "20", "--cols", "25", "--rank", "2", "--nnz", "4",
              "--out", str(data)])
        ckpt = tmp_path / "model"
        assert main(["train", "--data", str(data), "--d", "4", "--epochs", "1",
                     "--lambda", "0.05", "--alpha", "0.01", "--solver", "lu",
                     "--out", str(ckpt), "--log", str(tmp_path / "m.jsonl")]) == 0
        names = sorted(os.listdir(ckpt))
        assert names == ["items.ckpt", "users.ckpt"]
