import csv
import json
import logging

import numpy as np
import pytest

from kaczsketch import bench
from kaczsketch.bench import (
    ExperimentSpec,
    TrialResult,
    aggregate,
    export,
    generate_problem,
    median_trace,
    read_results_csv,
    run_grid,
    tau_for,
    write_results_csv,
)


def small_spec(**kw):
    base = dict(m=400, n=5, d_multipliers=[10], trials=2, base_seed=3)
    base.update(kw)
    return ExperimentSpec(**base)


def result(method="MWRK", iters=10, wall=1.0, status="converged", d=50, trial=0, trace=None):
    return TrialResult(method, 400, 5, d, 0, trial, 0, iters, wall,
                       1e-7 if status == "converged" else 1e-3, status, trace)


class TestGenerateProblem:
    def test_consistent(self):
        A, xs, b = generate_problem(50, 4, 1)
        assert np.abs(b - A @ xs).max() <= 1e-10

    def test_deterministic(self):
        p1, p2 = generate_problem(30, 3, 9), generate_problem(30, 3, 9)
        for u, v in zip(p1, p2):
            assert u.tobytes() == v.tobytes()

    def test_moments(self):
        A, _, _ = generate_problem(2000, 20, 5)
        m = A.shape[0]
        assert (np.abs(A.mean(axis=0)) <= 5 / np.sqrt(m)).all()
        # the sample variance of N(0,1) has standard error sqrt(2 / (m - 1))
        assert (np.abs(A.var(axis=0, ddof=1) - 1) <= 5 * np.sqrt(2 / (m - 1))).all()

    @pytest.mark.parametrize("m,n", [(5, 5), (3, 4), (2, 0)])
    def test_shape_errors(self, m, n):
        with pytest.raises(ValueError):
            generate_problem(m, n, 0)


class TestSpec:
    @pytest.mark.parametrize("d,tau", [(500, 10), (1000, 20), (75, 2), (25, 1), (10, 1), (125, 3)])
    def test_tau_rounding(self, d, tau):
        assert tau_for(d) == tau

    def test_invalid(self):
        with pytest.raises(ValueError):
            small_spec(trials=0)
        with pytest.raises(ValueError):
            small_spec(d_multipliers=[80])
        with pytest.raises(ValueError):
            small_spec(methods=["GRK"])

    def test_dict_round_trip(self):
        spec = small_spec(methods=["MWRK", "RaBK-c"], lk_weights="normalized")
        assert ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
        with pytest.raises(ValueError):
            ExperimentSpec.from_dict({**spec.to_dict(), "bogus": 1})

    def test_seeds(self):
        assert bench.problem_seed(0, 1) != bench.problem_seed(0, 2)
        assert bench.problem_seed(0, 1, True) == bench.problem_seed(0, 2, True)
        seeds = {bench.method_seed(0, 0, d, t) for d in (50, 100) for t in bench.TAGS}
        assert len(seeds) == 2 * len(bench.TAGS)

    def test_config_applies_spec_options(self):
        spec = small_spec(block_mode="partition", lk_weights="normalized", tol=1e-4)
        cfg = spec.config("RaBK-a", 50, 0)
        assert cfg.block.mode == "partition" and cfg.stepsize.lk_weights == "normalized"
        assert cfg.stop.tol == 1e-4 and cfg.block.tau == 1
        assert spec.config("LS-RaBK(Q)-c", 500, 0).block.tau == 10


class TestRunGrid:
    def test_single_easy_trial(self):
        out = run_grid(small_spec(methods=["MWRK"], trials=1))
        assert len(out) == 1 and out[0].status == "converged"

    def test_order_and_sink(self):
        spec = small_spec(d_multipliers=[10, 20])
        seen = []
        out = run_grid(spec, sink=seen.append)
        assert seen == out
        assert [(r.d, r.trial, r.method) for r in out] == [
            (d, t, m) for d in spec.ds for t in range(spec.trials) for m in spec.methods]

    def test_same_problem_for_every_method(self, monkeypatch):
        seen = []
        real = bench.solve

        def spy(A, b, cfg, xstar=None, backend=None):
            seen.append(A.tobytes())
            return real(A, b, cfg, xstar=xstar, backend=backend)

        monkeypatch.setattr(bench, "solve", spy)
        run_grid(small_spec(trials=1))
        assert len(set(seen)) == 1

    def test_rerun_is_identical(self):
        spec = small_spec()
        a, b = run_grid(spec), run_grid(spec)
        assert [r.iters for r in a] == [r.iters for r in b]
        assert [dict(r.row(), wall_seconds=0) for r in a] == [dict(r.row(), wall_seconds=0) for r in b]

    def test_process_pool_matches_serial(self):
        spec = small_spec(trials=2, methods=["RS-MWRK(Q)", "RaBK-c"])
        serial = run_grid(spec, keep_traces=False)
        pooled = run_grid(spec, workers=2, keep_traces=False)
        assert [(r.method, r.iters, r.final_res) for r in serial] == [
            (r.method, r.iters, r.final_res) for r in pooled]

    def test_failures_are_recorded(self, monkeypatch, caplog):
        def boom(*a, **k):
            raise RuntimeError("boom")

        monkeypatch.setattr(bench, "solve", boom)
        with caplog.at_level(logging.ERROR):
            out = run_grid(small_spec(trials=1, methods=["MWRK", "RaBK-c"]))
        assert [r.status for r in out] == ["error", "error"]
        assert "boom" in caplog.text

    def test_fixed_problem(self, monkeypatch):
        seen = []
        real = bench.solve

        def spy(A, b, cfg, xstar=None, backend=None):
            seen.append(A.tobytes())
            return real(A, b, cfg, xstar=xstar, backend=backend)

        monkeypatch.setattr(bench, "solve", spy)
        run_grid(small_spec(trials=3, methods=["MWRK"], fixed_problem=True))
        assert len(set(seen)) == 1

    def test_matrix_file(self, tmp_path):
        from kaczsketch.linalg import save_matrix_market

        A, _, _ = generate_problem(300, 4, 0)
        save_matrix_market(tmp_path / "a.mtx", A)
        spec = small_spec(m=300, n=4, methods=["RS-MWRK(G)"], matrix_path=str(tmp_path / "a.mtx"))
        assert all(r.status == "converged" for r in run_grid(spec))


class TestAggregate:
    def test_single_trial(self):
        g = aggregate([result(iters=12, wall=0.5)]).group(400, 5, 50)
        assert g.methods["MWRK"].mean_iters == 12 and g.methods["MWRK"].mean_cpu == 0.5

    def test_mean(self):
        g = aggregate([result(iters=80), result(iters=90, trial=1)]).group(400, 5, 50)
        assert g.methods["MWRK"].mean_iters == 85

    def test_non_converged_excluded(self, caplog):
        rs = [result(iters=80), result(iters=100_000, status="maxIters", trial=1)]
        with caplog.at_level(logging.WARNING):
            s = aggregate(rs).group(400, 5, 50).methods["MWRK"]
        assert s.mean_iters == 80 and s.converged == 1 and s.trials == 2
        assert s.convergence_rate == 0.5 and "excluded" in caplog.text

    def test_unavailable(self):
        s = aggregate([result(status="diverged")]).group(400, 5, 50).methods["MWRK"]
        assert not s.available and s.mean_iters is None

    def test_speedups(self):
        walls = {"CS-MWRK": 8.0, "RS-MWRK(Q)": 2.0, "RS-MWRK(G)": 4.0, "RaBK-c": 9.0,
                 "LS-RaBK(Q)-c": 3.0, "RaBK-a": 5.0, "LS-RaBK(Q)-a": 10.0}
        g = aggregate([result(t, wall=w) for t, w in walls.items()]).group(400, 5, 50)
        assert g.speedups == {"speedup1": 4.0, "speedup2": 2.0, "speedup3": 3.0,
                              "speedup4": 0.5}

    def test_missing_speedup(self):
        g = aggregate([result("CS-MWRK")]).group(400, 5, 50)
        assert set(g.speedups.values()) == {None}

    def test_groups(self):
        stats = aggregate([result(d=50), result(d=100)])
        assert [g.d for g in stats.groups] == [50, 100]
        with pytest.raises(KeyError):
            stats.group(1, 1, 1)
        json.dumps(stats.to_dict())

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestExport:
    def test_two_iteration_trace(self, tmp_path):
        trace = (np.array([0, 1, 2]), np.array([1.0, 0.2, 0.0]), np.array([0.0, 0.1, 0.2]))
        rs = [result(iters=2, trace=trace)]
        paths = export(rs, aggregate(rs), tmp_path)
        with open(paths["trace:MWRK:400x5:d50"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(bench.TRACE_FIELDS)
        assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
        assert float(rows[1][1]) == 0.0

    def test_csv_round_trip(self, tmp_path):
        rs = run_grid(small_spec())
        path = write_results_csv(rs, tmp_path / "r.csv")
        assert read_results_csv(path) == rs
        with open(path) as fh:
            assert fh.readline().strip() == ",".join(bench.RESULT_FIELDS)

    def test_json_results(self, tmp_path):
        rs = run_grid(small_spec(trials=1, methods=["MWRK"]))
        paths = export(rs, aggregate(rs), tmp_path, fmt="json")
        assert json.loads(paths["results"].read_text())[0]["method"] == "MWRK"
        with pytest.raises(ValueError):
            export(rs, aggregate(rs), tmp_path, fmt="xml")

    def test_converged_rows_below_tolerance(self, tmp_path):
        spec = small_spec()
        export(run_grid(spec), aggregate(run_grid(spec)), tmp_path)
        for r in read_results_csv(tmp_path / "results.csv"):
            if r.status == "converged":
                assert r.final_res < spec.tol

    def test_trace_starts_at_one(self, tmp_path):
        rs = run_grid(small_spec())
        paths = export(rs, aggregate(rs), tmp_path, trace_stride=5)
        for key, p in paths.items():
            if key.startswith("trace:"):
                with open(p) as fh:
                    rows = list(csv.DictReader(fh))
                assert rows[0]["iteration"] == "0"
                assert float(rows[0]["median_log10_res"]) == 0.0
                its = [int(r["iteration"]) for r in rows]
                assert all(i % 5 == 0 for i in its[:-1])

    def test_median_carries_final_value(self):
        t1 = (np.array([0, 1]), np.array([1.0, 1e-8]), np.array([0.0, 1.0]))
        t2 = (np.array([0, 1, 2, 3]), np.array([1.0, 1e-2, 1e-4, 1e-8]), np.zeros(4))
        t3 = (np.array([0, 1, 2, 3]), np.array([1.0, 1e-3, 1e-5, 1e-7]), np.zeros(4))
        rs = [result(trace=t) for t in (t1, t2, t3)]
        it, med, _ = median_trace(rs)
        assert it.tolist() == [0, 1, 2, 3]
        np.testing.assert_allclose(med, [0, -3, -5, -8])

    def test_unwritable_destination(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        rs = [result()]
        with pytest.raises(OSError):
            export(rs, aggregate(rs), blocker / "sub")
