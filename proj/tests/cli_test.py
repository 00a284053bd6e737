#!/usr/bin/env python3
"""End-to-end checks of the hkflow command line tool."""

import argparse
import json
import os
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def run(cli, *args, env=None):
    full_env = dict(os.environ)
    full_env.pop("HKFLOW_SEED", None)
    full_env.update(env or {})
    return subprocess.run([cli, *args], capture_output=True, text=True, env=full_env, timeout=600)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--schema", required=True)
    ap.add_argument("--data", required=True)
    args = ap.parse_args()
    schema = json.loads(Path(args.schema).read_text())
    data = Path(args.data)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        out = tmp / "two"
        p = run(args.cli, "simulate", "--config", str(data / "two_agents.json"), "--out", str(out))
        check(p.returncode == 0, "simulate exits 0")
        summary = json.loads((out / "summary.json").read_text())
        try:
            jsonschema.validate(summary, schema)
            check(True, "summary validates against the schema")
        except jsonschema.ValidationError as e:
            check(False, f"summary validates against the schema: {e.message}")
        run0 = summary["runs"][0]
        check(run0["ok"] and run0["clusters"]["count"] == 1, "two agents merge into one cluster")
        check(abs(run0["clusters"]["centers"][0][0] - 0.4) < 1e-6, "cluster sits at 0.4")
        check(run0["seed_used"] != 0, "seed recorded")

        traj = (out / "run_0000_trajectory.csv").read_bytes()
        check(traj.startswith(b"t,agent,comp_1\n") and b"\r" not in traj, "trajectory CSV header and LF endings")
        mon = (out / "run_0000_monitors.csv").read_text().splitlines()
        cols = mon[0].split(",")
        m2 = [float(r.split(",")[cols.index("m2")]) for r in mon[1:]]
        check(all(b <= a + 1e-12 for a, b in zip(m2, m2[1:])), "monitor m2 column non-increasing")

        # same config, same bytes
        out2 = tmp / "two_again"
        run(args.cli, "simulate", "--config", str(data / "two_agents.json"), "--out", str(out2))
        check((out2 / "summary.json").read_bytes() == (out / "summary.json").read_bytes(), "byte-identical rerun")

        # seed override from the environment
        cfg = tmp / "random.json"
        cfg.write_text(json.dumps({
            "n": 12, "d": 2, "radius": 2.0, "kernel": {"family": "indicator", "q": 1},
            "seed": 5, "runs": 2, "analyses": {"pairwise_scmc": True, "genericity": True, "sqrt2": True},
            "keep_trajectory": False,
        }))
        a, b = tmp / "a", tmp / "b"
        run(args.cli, "simulate", "--config", str(cfg), "--out", str(a))
        p = run(args.cli, "simulate", "--config", str(cfg), "--out", str(b), env={"HKFLOW_SEED": "99"})
        check(p.returncode == 0, "simulate with HKFLOW_SEED exits 0")
        sa = json.loads((a / "summary.json").read_text())
        sb = json.loads((b / "summary.json").read_text())
        check(sb["spec"]["seed"] == 99 and sa["spec"]["seed"] == 5, "HKFLOW_SEED replaces the config seed")
        check(sa["runs"][0]["seed_used"] != sb["runs"][0]["seed_used"], "HKFLOW_SEED changes run seeds")
        try:
            jsonschema.validate(sb, schema)
            check(True, "analysed summary validates against the schema")
        except jsonschema.ValidationError as e:
            check(False, f"analysed summary validates against the schema: {e.message}")
        p = run(args.cli, "simulate", "--config", str(cfg), env={"HKFLOW_SEED": "abc"})
        check(p.returncode == 2, "malformed HKFLOW_SEED exits 2")

        # config errors
        bad = tmp / "bad.json"
        bad.write_text('{"n": 0}')
        check(run(args.cli, "simulate", "--config", str(bad)).returncode == 2, "invalid config exits 2")
        bad.write_text("{not json")
        check(run(args.cli, "simulate", "--config", str(bad)).returncode == 2, "unparsable config exits 2")
        check(run(args.cli, "simulate", "--config", str(tmp / "missing.json")).returncode == 2,
              "missing config exits 2")
        check(run(args.cli, "simulate").returncode == 2, "missing option exits 2")

        # classify a saved state
        p = run(args.cli, "classify", "--state", str(out / "run_0000_trajectory.csv"), "--q", "1")
        check(p.returncode == 0 and json.loads(p.stdout)["verdict"] == "interior_F", "classify final sample")
        st = tmp / "state.csv"
        st.write_text("0\n1\n")
        p = run(args.cli, "classify", "--state", str(st), "--q", "1")
        check(json.loads(p.stdout)["verdict"] == "boundary_Fbar_only", "classify pair on the bound")

        # robustness of the two reference pairs
        rc = tmp / "rob.json"
        rc.write_text(json.dumps({"centers": [[0.0], [1.7]], "weights": [10, 1]}))
        p = run(args.cli, "robustness", "--config", str(rc), "--x0", "0.85", "--deltas", "1e-2,1e-3,1e-4")
        r = json.loads(p.stdout)
        check(p.returncode == 0 and r["verdicts"]["sufficient_verdict"] == "robust_thm", "robust pair verdict")
        check(r["sweep"]["strictly_decreasing"], "robust pair sweep decreases")
        rc.write_text(json.dumps({"centers": [[0.0], [1.5]]}))
        p = run(args.cli, "robustness", "--config", str(rc), "--x0", "0.75", "--deltas", "1e-2,1e-3")
        r = json.loads(p.stdout)
        check(r["verdicts"]["necessary_verdict"] == "not_robust_scmc", "shared center of mass verdict")
        check(min(pt["Delta"] for pt in r["sweep"]["points"]) >= 0.249, "shared center of mass displacement")
        p = run(args.cli, "robustness", "--config", str(rc), "--x0", "1.0", "--deltas", "1e-2")
        check(p.returncode == 2, "zero opinion on a sphere exits 2")

        # geometry
        p = run(args.cli, "geometry", "--lemma44", "--x2", "1.2,0", "--samples", "10000")
        g = json.loads(p.stdout)
        check(p.returncode == 0 and g["max_intersections"] == 2, "geometry finds double crossings below sqrt 2")
        p = run(args.cli, "geometry", "--lemma44", "--x2", "0,2", "--samples", "10000")
        check(json.loads(p.stdout)["max_intersections"] <= 1, "geometry: at most one crossing at distance 2")

        # small table1 batch
        p = run(args.cli, "table1", "--n", "60", "--d", "2", "--radius", "2", "--runs", "2", "--seed", "1",
                "--out", str(tmp / "t1"))
        check(p.returncode == 0, "table1 exits 0")
        t1 = json.loads((tmp / "t1" / "summary.json").read_text())
        s = t1["stats"]
        check(s["categorized"] and s["count_pairwise_scmc"] + s["count_sufficient_hypotheses"]
              + s["count_neither"] == s["runs"], "table1 categories partition the runs")
        try:
            jsonschema.validate(t1, schema)
            check(True, "table1 summary validates against the schema")
        except jsonschema.ValidationError as e:
            check(False, f"table1 summary validates against the schema: {e.message}")

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
