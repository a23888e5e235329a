#!/usr/bin/env python3
"""Collaborative deployment demo: three detection nodes, one shared store.

Trains a profile centrally, replays a labeled test stream into the shared
capture store under a chosen assignment rule, runs an independent decision
engine per node (in-process or over loopback TCP), and prints per-node and
aggregate results. Optionally crashes a node to show graceful degradation.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from netanom import synth
from netanom.collab import SimulationConfig, replay, run_simulation
from netanom.decision import train_profile
from netanom.evaluation import render_table
from netanom.gmm import EmConfig
from netanom.ingest import SamplePlan, default_schema, stratified_sample
from netanom.preprocess import fit_preprocess


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=30_000)
    ap.add_argument("--nodes", nargs="+", default=["A", "B", "C"])
    ap.add_argument("--assignment", default="hash-of-source",
                    choices=["round-robin", "hash-of-source", "explicit"])
    ap.add_argument("--transport", default="in-process",
                    choices=["in-process", "loopback-socket"])
    ap.add_argument("--interval-size", type=int, default=500)
    ap.add_argument("--w", type=float, default=2.0)
    ap.add_argument("--fail-node", default=None, help="inject a crash-stop failure")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    schema = default_schema()
    records = synth.generate_records(args.rows, seed=args.seed, attack_fraction=0.35)
    train, test = stratified_sample(
        records, SamplePlan(round(args.rows * 0.8), 0.65, 0.6, seed=args.seed)
    )
    print(f"training on {len(train)} normals, streaming {len(test)} records to {len(args.nodes)} node(s)")

    pp = fit_preprocess(train, schema, "table1")
    matrix = pp.apply_records(train)
    profile = train_profile(
        matrix, EmConfig(n_components=matrix.shape[1], seed=args.seed),
        preprocess_digest=pp.digest(),
    )

    cfg = SimulationConfig(
        nodes=tuple(args.nodes),
        assignment=args.assignment,
        interval_size=args.interval_size,
        w=args.w,
        transport=args.transport,
        fail_nodes=(args.fail_node,) if args.fail_node else (),
    )
    store = replay(test, cfg, schema)
    outcome = run_simulation(store, profile, pp, cfg)

    for node in cfg.nodes:
        res = outcome.node_results[node]
        if res.failed:
            print(f"\nnode {node}: FAILED after {res.attempts} attempt(s): {res.error}")
            continue
        print(f"\nnode {node} ({res.n_records} records):")
        print(render_table([outcome.per_node_reports[node]]), end="")
    print(f"\naggregate over {'healthy nodes' if outcome.partial else 'all nodes'}:")
    print(render_table([outcome.aggregate_report]), end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
