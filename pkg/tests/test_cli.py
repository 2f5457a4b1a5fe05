import json

import pytest

from blmchain import chain as chaincore
from blmchain import cli, storage, tsp


def run(argv):
    return cli.main(argv)


@pytest.fixture()
def instance_file(tmp_path):
    path = tmp_path / "inst.json"
    assert run(["gen-tsp", "--n", "8", "--seed", "9",
                "--out", str(path)]) == 0
    return path


def simulate_args(instance_file, out_dir, extra=()):
    return ["simulate", "--instance", str(instance_file),
            "--miners", "2", "--blocks", "5", "--seed", "3",
            "--speed", "3000", "--t", "3", "--k0", "2",
            "--sample-budget", "2000",
            "--out-dir", str(out_dir), *extra]


class TestGenTsp:
    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run(["gen-tsp", "--n", "25", "--seed", "7",
                    "--out", str(a)]) == 0
        assert run(["gen-tsp", "--n", "25", "--seed", "7",
                    "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_n_below_two_is_usage_error(self, tmp_path):
        assert run(["gen-tsp", "--n", "1",
                    "--out", str(tmp_path / "x.json")]) == 2

    def test_file_round_trips(self, tmp_path):
        path = tmp_path / "i.json"
        assert run(["gen-tsp", "--n", "10", "--seed", "1",
                    "--out", str(path)]) == 0
        instance = tsp.load_instance(path)
        assert instance.n == 10


class TestSolveExact:
    def test_unit_square(self, tmp_path, capsys):
        path = tmp_path / "sq.json"
        tsp.save_instance(tsp.TspInstance(
            "square", ((0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0))),
            path)
        assert run(["solve-exact", "--instance", str(path)]) == 0
        out = capsys.readouterr().out
        assert "4.000000" in out

    def test_over_cap_is_usage_error(self, tmp_path):
        path = tmp_path / "big.json"
        tsp.save_instance(tsp.generate_instance(20, 1), path)
        assert run(["solve-exact", "--instance", str(path)]) == 2

    def test_matches_brute_force(self, tmp_path, capsys):
        instance = tsp.generate_instance(9, 12)
        path = tmp_path / "i.json"
        tsp.save_instance(instance, path)
        assert run(["solve-exact", "--instance", str(path)]) == 0
        printed = capsys.readouterr().out.splitlines()[0]
        _, expected = tsp.brute_force_tsp(instance)
        assert printed == f"{expected:.6f}"


class TestSimulateAndValidate:
    def test_pipeline_validates(self, tmp_path, instance_file):
        out = tmp_path / "run"
        assert run(simulate_args(instance_file, out)) == 0
        assert run(["validate", "--chain", str(out / "chain.json"),
                    "--instance", str(instance_file)]) == 0

    def test_rerun_is_byte_identical(self, tmp_path, instance_file):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run(simulate_args(instance_file, out1)) == 0
        assert run(simulate_args(instance_file, out2)) == 0
        for name in ("chain.json", "results.csv", "rejections.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_results_row_count_matches_blocks(self, tmp_path, instance_file):
        out = tmp_path / "rows"
        assert run(simulate_args(instance_file, out)) == 0
        records = storage.read_results_csv(out / "results.csv")
        assert len(records) == 5
        assert [r.height for r in records] == list(range(1, 6))

    def test_tampered_chain_fails_validation(self, tmp_path, instance_file):
        out = tmp_path / "tamper"
        assert run(simulate_args(instance_file, out)) == 0
        path = out / "chain.json"
        raw = path.read_text()
        obj = json.loads(raw)
        obj["blocks"][2]["transactions"][0] = (
            "QQ==" if obj["blocks"][2]["transactions"][0] != "QQ=="
            else "Qg==")
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        code = run(["validate", "--chain", str(path),
                    "--instance", str(instance_file)])
        assert code == 1

    def test_truncated_json_is_parse_error(self, tmp_path, instance_file):
        out = tmp_path / "trunc"
        assert run(simulate_args(instance_file, out)) == 0
        path = out / "chain.json"
        path.write_text(path.read_text()[:-40])
        assert run(["validate", "--chain", str(path),
                    "--instance", str(instance_file)]) == 2

    def test_wrong_instance_is_detected(self, tmp_path, instance_file):
        out = tmp_path / "mismatch"
        assert run(simulate_args(instance_file, out)) == 0
        other = tmp_path / "other.json"
        assert run(["gen-tsp", "--n", "8", "--seed", "77",
                    "--out", str(other)]) == 0
        assert run(["validate", "--chain", str(out / "chain.json"),
                    "--instance", str(other)]) == 1

    def test_missing_problem_is_usage_error(self, tmp_path):
        assert run(["simulate", "--out-dir", str(tmp_path / "x")]) == 2

    def test_fraud_flag_populates_rejection_log(self, tmp_path,
                                                instance_file):
        out = tmp_path / "fraud"
        assert run(simulate_args(instance_file, out,
                                 extra=["--fraud-height", "2"])) == 0
        rejections = storage.read_rejections_csv(out / "rejections.csv")
        assert any(r.reason == "counterexample" for r in rejections)

    def test_config_file_run(self, tmp_path, instance_file):
        config = {
            "problem": {"kind": "tsp", "instance": instance_file.name},
            "miners": 2, "blocks": 4, "seed": 5, "speed": 3000.0,
            "sample_budget": 2000,
            "difficulty": {"k0": 2, "t": 3},
        }
        cfg_path = instance_file.parent / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "cfg-run"
        assert run(["simulate", "--config", str(cfg_path),
                    "--out-dir", str(out)]) == 0
        records = storage.read_results_csv(out / "results.csv")
        assert len(records) == 4


class TestMineCommand:
    def test_mine_writes_valid_chain(self, tmp_path, instance_file):
        out = tmp_path / "mined.json"
        assert run(["mine", "--instance", str(instance_file),
                    "--blocks", "4", "--seed", "2", "--speed", "3000",
                    "--t", "3", "--k0", "2", "--out", str(out)]) == 0
        assert run(["validate", "--chain", str(out),
                    "--instance", str(instance_file)]) == 0

    def test_continuous_mine(self, tmp_path):
        out = tmp_path / "cont.json"
        assert run(["mine", "--continuous", "demo", "--blocks", "2",
                    "--seed", "4", "--speed", "5000", "--k0", "1",
                    "--k-max", "1", "--sig-figs", "10", "--delta", "0.05",
                    "--cert-samples", "400",
                    "--out", str(out)]) == 0
        chn, tip = storage.load_chain(out)
        assert chn.height == 2
        assert chn.tip_id() == tip
        assert run(["validate", "--chain", str(out)]) == 0


class TestReport:
    def test_figures_rendered_alongside_csv(self, tmp_path, instance_file):
        out = tmp_path / "plots"
        assert run(simulate_args(instance_file, out, extra=["--plot"])) == 0
        assert (out / "results.csv").exists()
        assert (out / "convergence.png").stat().st_size > 0
        assert (out / "difficulty.png").stat().st_size > 0

    def test_report_subcommand(self, tmp_path, instance_file):
        out = tmp_path / "run"
        assert run(simulate_args(instance_file, out)) == 0
        figs = tmp_path / "figs"
        assert run(["report", "--results", str(out / "results.csv"),
                    "--out-dir", str(figs), "--exact", "250.0"]) == 0
        assert (figs / "convergence.png").exists()
        assert (figs / "difficulty.png").exists()

    def test_report_on_garbage_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,results,file\n")
        assert run(["report", "--results", str(bad),
                    "--out-dir", str(tmp_path)]) == 2


class TestStorageStrictness:
    def test_non_canonical_base64_rejected(self, tmp_path, instance_file):
        out = tmp_path / "b64"
        assert run(simulate_args(instance_file, out)) == 0
        path = out / "chain.json"
        obj = json.loads(path.read_text())
        tx0 = obj["blocks"][1]["transactions"][0]
        # flip unused padding bits: decodes identically but is not canonical
        assert tx0.endswith("=")
        mangled = tx0[:-2] + ("R" if tx0[-2] != "R" else "S") + "="
        obj["blocks"][1]["transactions"][0] = mangled
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        code = run(["validate", "--chain", str(path),
                    "--instance", str(instance_file)])
        assert code != 0

    def test_uppercase_hex_rejected(self, tmp_path, instance_file):
        out = tmp_path / "hex"
        assert run(simulate_args(instance_file, out)) == 0
        path = out / "chain.json"
        obj = json.loads(path.read_text())
        obj["tip_id"] = obj["tip_id"].upper()
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        assert run(["validate", "--chain", str(path),
                    "--instance", str(instance_file)]) == 2

    def test_chain_round_trip_preserves_ids(self, tmp_path, instance_file):
        out = tmp_path / "round"
        assert run(simulate_args(instance_file, out)) == 0
        chn, tip = storage.load_chain(out / "chain.json")
        assert chn.tip_id() == tip
        again = storage.dumps_chain(chn)
        assert again == (out / "chain.json").read_text()
        reloaded, _ = storage.chain_from_json(json.loads(again))
        assert ([chaincore.block_id(b.header) for b in reloaded.blocks]
                == [chaincore.block_id(b.header) for b in chn.blocks])
