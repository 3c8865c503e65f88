import json
import subprocess
import sys

import pytest

from capalloc import instance as I
from capalloc.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def body(path):
    return "".join(l for l in open(path) if not l.startswith("#"))


class TestGenAndOracle:
    def test_lp_gap_oracle(self, capsys, tmp_path):
        f = tmp_path / "g.json"
        assert run(capsys, "gen", "--family", "lp-gap", "--seed", 1, "--out", f)[0] == 0
        code, out, _ = run(capsys, "oracle", "--instance", f)
        assert code == 0 and "opt_online: 1.5" in out

    def test_seed_printed(self, capsys):
        code, out, _ = run(capsys, "gen", "--family", "random", "--n", 2)
        assert code == 0 and out.startswith("seed: ")

    def test_general_output(self, capsys, tmp_path):
        f = tmp_path / "g.json"
        run(capsys, "gen", "--family", "bdm", "--n", 3, "--general", "--seed", 0, "--out", f)
        assert isinstance(I.read(f), I.GeneralInstance)

    def test_budget_exit_code(self, capsys):
        code, _, err = run(capsys, "oracle", "--family", "random", "--n", 12, "--T", 8,
                           "--seed", 1)
        assert code == 3 and "budget" in err

    def test_offline_column(self, capsys, tmp_path):
        out = tmp_path / "o.csv"
        code, text, _ = run(capsys, "oracle", "--family", "lp-gap", "--seed", 2,
                            "--offline-trials", 500, "--out", out)
        assert code == 0 and "opt_offline" in text
        assert "opt_offline_estimate" in out.read_text()


class TestBadInput:
    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "run", "--instance", tmp_path / "none.json", "--seed", 1)[0] == 2

    def test_invalid_instance(self, capsys, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text(json.dumps({"schema": "capalloc-bernoulli/1", "n": 1,
                                 "rounds": [{"p": 1.5, "c": 1, "values": [1], "q": [1]}]}))
        code, _, err = run(capsys, "lp", "--instance", f, "--seed", 1)
        assert code == 2 and "p=1.5" in err

    def test_unparseable_flags(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--trials", "many"])
        assert exc.value.code == 2

    def test_bdm_rejects_stochastic(self, capsys):
        code, _, _ = run(capsys, "run", "--family", "random", "--q-range", 0.2, 0.5,
                         "--alg", "bdm", "--trials", 10, "--seed", 1)
        assert code == 2

    def test_exact_mode_too_large(self, capsys):
        code, _, _ = run(capsys, "run", "--family", "random", "--n", 7, "--T", 2,
                         "--trials", 10, "--seed", 1)
        assert code == 3


class TestRun:
    def test_bdm_mean(self, capsys, tmp_path):
        out = tmp_path / "r.csv"
        code, text, _ = run(capsys, "run", "--family", "bdm", "--n", 4, "--alg", "bdm",
                            "--trials", 100_000, "--seed", 5, "--out", out)
        assert code == 0
        mean = float(text.split("mean_welfare: ")[1].split()[0])
        assert abs(mean - 7.0) < 0.1
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# capalloc") and any(l.startswith("# seed: 5") for l in lines)
        assert "pair,x,empirical_prob,target_prob,ci_half_width" in lines

    def test_reproducible_and_job_independent(self, capsys, tmp_path):
        paths = []
        for k, jobs in enumerate((1, 1, 2)):
            p = tmp_path / f"r{k}.csv"
            run(capsys, "run", "--family", "lp-gap", "--trials", 9000, "--seed", 8,
                "--jobs", jobs, "--out", p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert body(paths[0]) == body(paths[2])

    @pytest.mark.parametrize("alg", ["twoproposal-exact", "twoproposal-sampled",
                                     "twoproposal-general", "greedy"])
    def test_algorithms(self, capsys, tmp_path, alg):
        out = tmp_path / "r.csv"
        code, _, _ = run(capsys, "run", "--family", "lp-gap", "--alg", alg, "--trials", 2000,
                         "--seed", 3, "--samples", 500, "--out", out)
        assert code == 0
        rows = [l for l in body(out).splitlines()[1:]]
        assert len(rows) == (6 if alg == "twoproposal-general" else 4)

    def test_solution_file_and_trace(self, capsys, tmp_path):
        inst, sol, out, tr = (tmp_path / n for n in ("g.json", "s.json", "r.csv", "t.jsonl"))
        run(capsys, "gen", "--family", "positive-correlation", "--eps", 0.3, "--seed", 0,
            "--out", inst)
        assert run(capsys, "lp", "--instance", inst, "--seed", 0, "--out", sol)[0] == 0
        code, _, _ = run(capsys, "run", "--instance", inst, "--solution", sol, "--trials", 500,
                         "--seed", 1, "--out", out, "--trace", tr)
        assert code == 0
        recs = [json.loads(l) for l in tr.read_text().splitlines()]
        assert recs[0]["event"] == "arrival"


class TestAuditAndTables:
    def test_audit_clean(self, capsys, tmp_path):
        out, rep = tmp_path / "a.csv", tmp_path / "rep.csv"
        code, text, _ = run(capsys, "audit", "--family", "positive-correlation", "--eps", 0.1,
                            "--seed", 1, "--out", out, "--report-out", rep)
        assert code == 0 and "no violations" in text
        assert "t,i,j,joint" in out.read_text() and "pr_alloc" in rep.read_text()

    def test_audit_violation_exit_code(self, capsys):
        # a constant far above the admissible range breaks the marginal law
        code, _, err = run(capsys, "audit", "--family", "random", "--n", 3, "--T", 4,
                           "--p-range", 0.96, 1.0, "--seed", 2, "--kappa", 0.2)
        assert code == 4 and "VIOLATION" in err

    def test_kappa_table(self, capsys, tmp_path):
        out = tmp_path / "k.csv"
        assert run(capsys, "kappa-table", "--max-c", 9, "--out", out)[0] == 0
        rows = body(out).splitlines()[1:]
        assert len(rows) == 9 and all(r.endswith(",1") for r in rows)

    def test_ratio(self, capsys, tmp_path):
        out = tmp_path / "ratio.csv"
        code, _, _ = run(capsys, "ratio", "--family", "lp-gap", "--trials", 2000, "--seed", 1,
                         "--out", out)
        assert code == 0 and "ratio_to_opt_online" in out.read_text()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "capalloc.cli", "kappa-table", "--max-c", "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "min_c,kappa" in res.stdout
