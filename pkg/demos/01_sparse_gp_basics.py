"""Sparse GP regression with a handful of inducing points.

Walks through the exact posterior, the Titsias collapsed q(u), and the bound
ordering ELBO <= log marginal.  Runs in a few seconds.
"""

# %%
import os

import numpy as np

from sgnp import gen_1d_regression
from sgnp.data import REGRESSION_KERNEL, REGRESSION_NOISE
from sgnp.gp_core import (Gaussian, collapsed_elbo, elbo, exact_posterior, log_marginal,
                          sparse_predict, titsias_collapse)
from sgnp.plotting import plot_predictions

out = os.environ.get("SGNP_DEMO_OUT", "demo_out")
os.makedirs(out, exist_ok=True)

# %% one task drawn from the 1D regression generator
task = gen_1d_regression(1, seed=4)[0]
X, y = task.X, task.y
Xq = np.linspace(-3.5, 3.5, 300)[:, None]
lo, hi = X.min(), X.max()
print(f"{task.n} observations")

# %% exact GP under the generating kernel
exact = exact_posterior(X, y, Xq, REGRESSION_KERNEL, REGRESSION_NOISE).numpy()
lml = float(log_marginal(X, y, REGRESSION_KERNEL, REGRESSION_NOISE).data)
print(f"log marginal likelihood {lml:.3f}")

# %% the collapsed bound tightens as inducing points are added
for m in (4, 8, 16, 32):
    Z = np.linspace(lo, hi, m)[:, None]
    bound = float(collapsed_elbo(X, y, Z, REGRESSION_KERNEL, REGRESSION_NOISE).data)
    print(f"m={m:2d}  collapsed bound {bound:9.3f}  gap {lml - bound:.3f}")

# %% the Titsias q(u) is the optimum of the uncollapsed ELBO
Z = np.linspace(lo, hi, 16)[:, None]
state = titsias_collapse(X, y, Z, REGRESSION_KERNEL, REGRESSION_NOISE)
e = float(elbo(X, y, state, REGRESSION_KERNEL, Gaussian(REGRESSION_NOISE)).data)
print(f"ELBO at the collapsed q(u) {e:.6f}")

# %% predictions from sixteen inducing points against the exact posterior
sparse = sparse_predict(state, Xq, REGRESSION_KERNEL).numpy()
inside = (Xq[:, 0] >= lo) & (Xq[:, 0] <= hi)
print(f"max |mean difference| over the data range {np.abs(sparse.mean - exact.mean)[inside].max():.3f}")
plot_predictions(Xq, sparse.mean, sparse.var + REGRESSION_NOISE ** 2, None, (X, y),
                 os.path.join(out, "sparse_gp.svg"))
plot_predictions(Xq, exact.mean, exact.var + REGRESSION_NOISE ** 2, None, (X, y),
                 os.path.join(out, "exact_gp.svg"))
