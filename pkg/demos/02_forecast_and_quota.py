"""
From demand forecasts to a spot quota
=====================================

OrgLinear predicts a Gaussian per organization and hour.  Reserving each
organization's 0.9-quantile peak leaves the GPUs that spot tasks may borrow.
"""

import numpy as np

from gfsim.forecast import DAY, HOUR, OrgLinearForecaster, evaluate_forecasts, predict_quantile
from gfsim.quota import compute_quota, estimate_inventory, update_eta
from gfsim.trace import SyntheticConfig, generate_synthetic

cfg = SyntheticConfig(seed=1, history_days=28, horizon_days=7)
_, usage = generate_synthetic(cfg)

# Train on the four weeks before t = 0, score on the week after.
forecaster = OrgLinearForecaster().fit(usage, end=0)
ev = evaluate_forecasts(forecaster, usage, 0, 7 * DAY)
print(f"{ev.origins} forecast origins")
for name in ("MAE", "RMSE", "MAQE"):
    print(f"  {name:5s} OrgLinear {ev.metrics[name]:6.2f}   naive peak {ev.naive_metrics[name]:6.2f}")
print(f"  0.9-quantile coverage {ev.coverage:.3f}")

# One day of hourly quotas
L = forecaster.history_length
for hour in range(0, 24, 3):
    t = hour * HOUR
    dists = [forecaster.predict(s.org_id, s.attributes, s.window(t, L), t) for s in usage]
    f = estimate_inventory(dists, 0.9, 1, cfg.capacity_gpus)
    reserved = sum(float(predict_quantile(d, 0.9)[0]) for d in dists)
    idle = cfg.capacity_gpus - sum(s.window(t + HOUR, 1)[0] for s in usage)  # no spot running yet
    print(f"{hour:02d}:00  reserved {reserved:6.1f}  f = {f:5.1f}  idle {idle:5.1f}  "
          f"quota = {compute_quota(f, 1.0, idle, 0):5.1f}")

# The safety factor reacts to evictions and to starving spot tasks
eta = 1.0
for e, wait in [(0.02, 2 * HOUR), (0.02, 2 * HOUR), (0.3, 0), (0.1, 0)]:
    eta = update_eta(eta, e, wait, 0.1, HOUR)
    print(f"eviction rate {e:.2f}, longest wait {wait / HOUR:.0f} h -> eta {eta:.3f}")
