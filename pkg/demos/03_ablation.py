"""
Scheduler variants on one shared trace
======================================

The same three-day trace is replayed under GFS, its ablations and the two
baseline schedulers.  Spot eviction rate and queuing time are where they differ;
HP tail latency should barely move.
"""

from gfsim.sim import run_variant
from gfsim.trace import SyntheticConfig, generate_synthetic, make_nodes

tasks, usage = generate_synthetic(SyntheticConfig(seed=0, spot_multiplier=2))
nodes = make_nodes(16)
shared = {}  # the OrgLinear forecaster is trained once and reused

print(f"{'variant':8s} {'HP p99 JCT':>11s} {'spot JCT':>9s} {'spot JQT':>9s} {'spot evict':>10s} {'alloc':>6s}")
for label in ("GFS", "GFS-e", "GFS-d", "GFS-s", "GFS-p", "GFS-sp", "FirstFit", "BestFit"):
    _, m = run_variant(label, tasks, nodes, seed=0, usage_history=usage, forecasters=shared)
    print(f"{label:8s} {m.hp.jct_p99:11.0f} {m.spot.jct_mean:9.0f} {m.spot.jqt_mean:9.0f} "
          f"{m.spot.eviction_rate:10.3f} {m.allocation_rate:6.2f}")
