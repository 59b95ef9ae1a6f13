# %% [markdown]
# # The confidence misalignment penalty on single samples
#
# A sample only pays the penalty when some class is strictly more probable
# than its true class. The penalty is the true-class probability divided by
# the mass of those competitors.

# %%
import numpy as np

from cmpcal import CmpConfig, cmp_sample, competitor_set, grad_logits, loss_from_logits, softmax

p = np.array([0.5, 0.3, 0.2])
for true in range(3):
    cs = competitor_set(p, true)
    print(f"true={true} competitors={sorted(cs.indices)} mass={cs.mass:.2f} "
          f"ratio={cmp_sample(p, true):.6f} "
          f"log_ratio={cmp_sample(p, true, CmpConfig(variant='log_ratio')):.6f}")

# %% [markdown]
# Ties with the true class do not count as competitors, so a tied top class
# costs nothing.

# %%
print(cmp_sample([0.4, 0.4, 0.2], 1))

# %% [markdown]
# The analytic logit gradient agrees with central differences.

# %%
rng = np.random.default_rng(0)
z = rng.normal(size=(3, 4))
y = np.array([0, 1, 2])
cfg = CmpConfig(lam=1.0)
g = grad_logits(z, y, cfg)
num = np.zeros_like(z)
h = 1e-5
for i in range(3):
    for j in range(4):
        zp, zm = z.copy(), z.copy()
        zp[i, j] += h
        zm[i, j] -= h
        num[i, j] = (loss_from_logits(zp, y, cfg).total - loss_from_logits(zm, y, cfg).total) / (2 * h)
print("probabilities:\n", np.round(softmax(z), 3))
print("max |analytic - numeric| =", np.abs(g - num).max())
