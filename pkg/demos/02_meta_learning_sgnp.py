"""Meta-learn an SGNP on a small 1D regression meta-dataset.

The inference network learns to place inducing points from the context set;
the Titsias collapse then gives q(u) in closed form.  The result is compared
against the exact GP that generated the data.  About a minute of CPU.
"""

# %%
import os

import numpy as np

from sgnp import MetaTrainConfig, Model, ModelSpec, evaluate, gen_1d_regression, meta_train
from sgnp.data import REGRESSION_KERNEL, REGRESSION_NOISE, split_context_target
from sgnp.kernels import se
from sgnp.plotting import plot_predictions, plot_trace

out = os.environ.get("SGNP_DEMO_OUT", "demo_out")
os.makedirs(out, exist_ok=True)
steps = int(os.environ.get("SGNP_DEMO_STEPS", "1000"))

# %% five training tasks, fifty held-out tasks split roughly in half
meta = gen_1d_regression(5, seed=0)
rng = np.random.default_rng(1)
test = [split_context_target(t, (0.45, 0.55), rng) for t in gen_1d_regression(50, 7, test=True)]

# %% a DeepSet inference network keeps this demo quick; the kernel starts off
model = Model(ModelSpec("SGNP", kernel=se(1.0), noise=0.1, m=16, f_net="deepset",
                        deepset_width=32), seed=0)
result = meta_train(model, meta, MetaTrainConfig(steps=steps, lr_start=3e-3, lr_end=3e-4))
plot_trace(result.trace, os.path.join(out, "sgnp_trace.svg"))
print("learned noise", float(np.exp(model.store["lik.log_noise"])))

# %% held-out log-likelihood per target point, against the oracle GP
oracle = Model(ModelSpec("GP", kernel=REGRESSION_KERNEL, noise=REGRESSION_NOISE))
for name, m in (("SGNP", model), ("GP", oracle)):
    agg = evaluate(m, test)["aggregate"]
    print(f"{name:5s} LL {agg['ll_mean']:.3f} +- {agg['ll_sem']:.3f}")

# %% one test task: where did the network put the inducing points?
t = test[0]
Xq = np.linspace(-2.5, 2.5, 200)[:, None]
pred = model.predict(t.Xc, t.yc, Xq)
Z = model.inducing_inputs(model.store.as_constants(), t.Xc, t.yc).data
print("inducing inputs", np.round(np.sort(Z[:, 0]), 2))
plot_predictions(Xq, pred.mean, pred.var + pred.noise_var, None, (t.Xc, t.yc),
                 os.path.join(out, "sgnp_task0.svg"))
