import csv
import json

import numpy as np
import pytest

from fastmks.cli import RunSpec, main, run
from fastmks.data import gaussian_mixture, random_sequences, save_sequences, save_vectors


@pytest.fixture
def files(tmp_path):
    ref = tmp_path / "ref.csv"
    qry = tmp_path / "q.csv"
    save_vectors(ref, gaussian_mixture(400, 3, seed=1))
    save_vectors(qry, gaussian_mixture(25, 3, seed=2))
    return tmp_path, str(ref), str(qry)


def run_main(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestQuery:
    def test_exact_verify(self, files, capsys):
        _, ref, qry = files
        code, out, _ = run_main(["query", "-r", ref, "-q", qry, "--k", "5", "--verify"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["verification"]["passed"]
        assert report["verification"]["mismatches"] == 0
        assert len(report["results"]) == 25
        assert all(len(r["hits"]) == 5 for r in report["results"])

    @pytest.mark.parametrize("kernel", ["polynomial:d=10,c=1", "cosine", "gaussian:sigma=1.0"])
    def test_kernels_verify(self, files, capsys, kernel):
        _, ref, qry = files
        code, _, _ = run_main(["query", "-r", ref, "-q", qry, "--kernel", kernel, "--k", "2",
                               "--verify"], capsys)
        assert code == 0

    def test_counts_reconcile(self, files, capsys):
        _, ref, qry = files
        _, out, _ = run_main(["query", "-r", ref, "-q", qry, "--k", "3"], capsys)
        report = json.loads(out)
        per_query = sum(r["kernelEvals"] for r in report["results"])
        assert per_query == report["aggregate"]["totalKernelEvals"]
        assert report["aggregate"]["speedup"] == pytest.approx(25 * 400 / per_query)

    def test_ava_guarantee_field(self, files, capsys):
        _, ref, qry = files
        code, out, _ = run_main(["query", "-r", ref, "-q", qry, "--mode", "ava:0.01",
                                 "--verify"], capsys)
        report = json.loads(out)
        assert code == 0
        assert report["guarantee"] == "value ≥ exact − 0.01"
        assert report["config"]["mode"] == "ava:eps=0.01"

    def test_rva_and_ra(self, files, capsys):
        _, ref, qry = files
        assert run_main(["query", "-r", ref, "-q", qry, "--mode", "rva:eps=0.5", "--verify"],
                        capsys)[0] == 0
        code, out, _ = run_main(["query", "-r", ref, "-q", qry, "--mode",
                                 "ra:tau=20,delta=0.1", "--verify"], capsys)
        assert code == 0
        assert "rankFailureRate" in json.loads(out)["verification"]

    def test_k_exceeds_n(self, tmp_path, capsys):
        ref = tmp_path / "r.csv"
        save_vectors(ref, np.eye(5))
        code, out, err = run_main(["query", "-r", str(ref), "-q", str(ref), "--k", "10"], capsys)
        assert code != 0
        assert "k exceeds n" in err
        assert "k exceeds n" in json.loads(out)["error"]

    def test_bad_mode(self, files, capsys):
        _, ref, qry = files
        code, _, err = run_main(["query", "-r", ref, "-q", qry, "--mode", "fast"], capsys)
        assert code == 2 and "error" in err

    def test_missing_file(self, files, capsys):
        tmp, ref, _ = files
        code, _, err = run_main(["query", "-r", ref, "-q", str(tmp / "nope.csv")], capsys)
        assert code == 2 and "not found" in err

    def test_domain_mismatch(self, files, tmp_path, capsys):
        _, ref, _ = files
        q = tmp_path / "q2.csv"
        save_vectors(q, np.ones((2, 5)))
        code, _, _ = run_main(["query", "-r", ref, "-q", str(q)], capsys)
        assert code == 2

    def test_malformed_reference(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3\n")
        code, _, err = run_main(["query", "-r", str(bad), "-q", str(bad)], capsys)
        assert code == 2 and "row 2" in err

    def test_tanh_falls_back(self, tmp_path, capsys):
        ref = tmp_path / "r.csv"
        save_vectors(ref, gaussian_mixture(100, 3, seed=4) * 5)
        code, out, err = run_main(["query", "-r", str(ref), "-q", str(ref), "--kernel",
                                   "tanh:s=1.0,c=0.0", "--k", "2", "--verify"], capsys)
        report = json.loads(out)
        assert code == 0
        assert report["fallback"] == "linear-scan"
        assert "warning" in err and report["warnings"]
        assert report["verification"]["passed"]

    def test_sharded(self, files, capsys):
        _, ref, qry = files
        code, out, _ = run_main(["query", "-r", ref, "-q", qry, "--shards", "4", "--k", "5",
                                 "--verify"], capsys)
        report = json.loads(out)
        assert code == 0
        row = report["shardCost"][0]
        assert row["m"] == 4
        assert row["totalEvals"] == sum(row["perShardEvals"])
        assert row["totalEvals"] == report["aggregate"]["totalKernelEvals"]

    def test_sequences(self, tmp_path, capsys):
        ref, qry = tmp_path / "r.fasta", tmp_path / "q.fasta"
        save_sequences(ref, random_sequences(150, length=40, seed=1))
        save_sequences(qry, random_sequences(10, length=40, seed=2))
        code, _, _ = run_main(["query", "-r", str(ref), "-q", str(qry), "--kernel",
                               "pspectrum:p=3", "--k", "5", "--verify"], capsys)
        assert code == 0

    def test_csv_and_output(self, files, capsys):
        tmp, ref, qry = files
        out_json, out_csv = tmp / "rep.json", tmp / "rep.csv"
        code, _, _ = run_main(["query", "-r", ref, "-q", qry, "--k", "2", "-o", str(out_json),
                               "--csv", str(out_csv)], capsys)
        assert code == 0
        report = json.loads(out_json.read_text())
        rows = list(csv.DictReader(out_csv.open()))
        assert rows[0]["k"] == "2"
        assert int(rows[0]["kernelEvals"]) == report["aggregate"]["totalKernelEvals"]

    def test_byte_identical_reports(self, files, capsys):
        tmp, ref, qry = files
        paths = [tmp / "a.json", tmp / "b.json"]
        for p in paths:
            main(["query", "-r", ref, "-q", qry, "--k", "5", "--shards", "2",
                  "--partitioner", "random", "--seed", "3", "-o", str(p)])
        capsys.readouterr()
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_hardness(self, files, capsys):
        _, ref, qry = files
        _, out, _ = run_main(["query", "-r", ref, "-q", qry, "--hardness", "--directions", "3",
                              "--intervals", "3"], capsys)
        assert json.loads(out)["hardness"]["expansionConstant"] >= 2.0


class TestBuildAndPersist:
    def test_build_validate_save_then_query(self, files, capsys):
        tmp, ref, qry = files
        index = tmp / "tree.npz"
        code, out, _ = run_main(["build", "-r", ref, "--validate", "--index", str(index)], capsys)
        report = json.loads(out)
        assert code == 0 and all(report["validation"].values())
        assert index.exists()
        built_evals = report["tree"]["constructionEvals"]

        _, fresh, _ = run_main(["query", "-r", ref, "-q", qry, "--k", "3"], capsys)
        _, loaded, _ = run_main(["query", "-r", ref, "-q", qry, "--k", "3", "--index",
                                 str(index)], capsys)
        fresh, loaded = json.loads(fresh), json.loads(loaded)
        assert fresh["results"] == loaded["results"]
        assert loaded["tree"]["constructionEvals"] == built_evals

    def test_index_for_other_data_refused(self, files, tmp_path, capsys):
        tmp, ref, qry = files
        index = tmp / "tree.npz"
        main(["build", "-r", ref, "--index", str(index)])
        other = tmp_path / "other.csv"
        save_vectors(other, gaussian_mixture(400, 3, seed=99))
        capsys.readouterr()
        code, _, err = run_main(["query", "-r", str(other), "-q", qry, "--index", str(index)],
                                capsys)
        assert code == 2 and "fingerprint" in err

    def test_strict_build(self, files, capsys):
        _, ref, _ = files
        code, out, _ = run_main(["build", "-r", ref, "--strict", "--validate"], capsys)
        assert code == 0
        assert json.loads(out)["config"]["strict"] is True


class TestBench:
    def test_rows(self, files, capsys):
        tmp, ref, qry = files
        out_csv = tmp / "bench.csv"
        code, out, _ = run_main(["bench", "-r", ref, "-q", qry, "--ks", "1,2,5,10",
                                 "--shard-counts", "1,2", "--verify", "--csv", str(out_csv)],
                                capsys)
        report = json.loads(out)
        assert code == 0
        assert [(r["m"], r["k"]) for r in report["rows"]] == \
            [(m, k) for m in (1, 2) for k in (1, 2, 5, 10)]
        assert all(v["passed"] for v in report["verification"])
        assert len(list(csv.DictReader(out_csv.open()))) == 8

    def test_k_exceeds_n(self, tmp_path, capsys):
        ref = tmp_path / "r.csv"
        save_vectors(ref, np.eye(3))
        code, _, err = run_main(["bench", "-r", str(ref), "-q", str(ref)], capsys)
        assert code == 2 and "k exceeds n" in err


class TestGenerateAndDiagnose:
    def test_generate_vectors(self, tmp_path, capsys):
        out = tmp_path / "g.csv"
        assert main(["generate", "clusters", "--n", "50", "--dim", "4", "--clusters", "3",
                     "-o", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 50

    def test_generate_sequences(self, tmp_path, capsys):
        out = tmp_path / "g.fasta"
        assert main(["generate", "sequences", "--n", "7", "--length", "30", "-o", str(out)]) == 0
        assert out.read_text().count(">") == 7

    def test_diagnose(self, files, capsys):
        _, ref, _ = files
        code, out, _ = run_main(["diagnose", "-r", ref, "--directions", "3", "--intervals",
                                 "3"], capsys)
        h = json.loads(out)["hardness"]
        assert code == 0 and h["gammaMethod"] == "sampled-direction greedy cover"

    def test_diagnose_cap(self, files, capsys):
        _, ref, _ = files
        code, _, err = run_main(["diagnose", "-r", ref, "--cap", "100"], capsys)
        assert code == 2 and "--sample" in err

    def test_run_api(self, files):
        _, ref, qry = files
        code, report = run(RunSpec(command="query", reference=ref, queries=qry, k=2))
        assert code == 0 and report["queries"] == 25
