# %% [markdown]
# # ECE, ACE, MCE and the reliability table
#
# An overconfident predictor reports confidence c but is right only with
# probability c**2. Compare it with a calibrated one.

# %%
import numpy as np

from cmpcal import Prediction, report

rng = np.random.default_rng(0)
conf = rng.uniform(0.25, 1.0, 20_000)
for name, hit_rate in (("calibrated", conf), ("overconfident", conf**2)):
    hits = rng.random(conf.size) < hit_rate
    rep = report([Prediction(float(c), 1, 1 if h else 0) for c, h in zip(conf, hits)], 15)
    print(f"{name:14s} ECE {100 * rep.ece:5.2f}  ACE {100 * rep.ace:5.2f}  MCE {100 * rep.mce:5.2f}")

# %% [markdown]
# The reliability table behind the last report: per-bin confidence vs accuracy,
# and the correct/incorrect histograms.

# %%
print(rep.to_csv())
