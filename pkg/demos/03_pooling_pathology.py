"""Why not fit one GP to all tasks at once?

Tasks drawn from the same GP prior are different functions.  Pooling them
into one dataset forces a single function through all of them, and the
per-point log marginal likelihood collapses.
"""

# %%
import numpy as np

from sgnp import gen_1d_regression
from sgnp.data import pooling_demo

# %%
for count in (2, 5, 20):
    r = pooling_demo(gen_1d_regression(count, seed=0))
    print(f"{count:2d} tasks, {r['pooled_points']:4d} points: pooled {r['pooled_per_point']:9.3f} "
          f"vs per task {r['per_task_mean_per_point']:.3f} nats per point")

# %% the same comparison is available from the command line:
#    sgnp pool --count 20 --seed 0
