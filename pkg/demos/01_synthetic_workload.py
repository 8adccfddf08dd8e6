"""
A synthetic multi-organization week
===================================

Four organizations share a 128-GPU cluster.  Their high-priority demand
follows a daily cycle with weekend dips; spot tasks arrive on top of it.
"""

import numpy as np

from gfsim.trace import DAY, HOUR, SyntheticConfig, generate_synthetic, is_weekend

cfg = SyntheticConfig(seed=0, spot_multiplier=2, horizon_days=7, history_days=7)
tasks, usage = generate_synthetic(cfg)

hp = [t for t in tasks if t.is_hp]
spot = [t for t in tasks if not t.is_hp]
print(f"{len(hp)} HP tasks and {len(spot)} spot tasks over {cfg.horizon_days:g} days")

# Usage is the realized peak concurrent HP demand per hour, history included.
for real in usage:
    times = real.bucket_times()
    weekday = real.values[~is_weekend(times)].mean()
    weekend = real.values[is_weekend(times)].mean()
    print(f"{real.org_id}: mean {real.values.mean():5.1f} GPUs, weekday {weekday:5.1f}, weekend {weekend:5.1f}")

# Hour-of-day shape, summed over organizations
total = np.sum([s.values for s in usage], axis=0)
hours = (usage[0].bucket_times() % DAY) // HOUR
by_hour = np.array([total[hours == h].mean() for h in range(24)])
print("busiest hour:", int(by_hour.argmax()), "quietest hour:", int(by_hour.argmin()))
print(" ".join(f"{v:.0f}" for v in by_hour))

# Spot tasks are more often gangs and checkpoint only sometimes
gangs = np.mean([t.pods > 1 for t in spot])
ckpt = np.mean([len(t.checkpoints) > 0 for t in spot])
print(f"spot gang share {gangs:.2f}, spot tasks with checkpoints {ckpt:.2f}")
