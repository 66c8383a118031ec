# %% [markdown]
# # The tape and the finite-difference check
#
# Everything trainable in the package runs on `masktts.autodiff`. This walks
# through recording a small graph, pulling gradients, and checking them
# against central differences.

# %%
import numpy as np

from masktts.autodiff import Tape, Tensor, adam_step, AdamState, grad_check, ops

gen = np.random.default_rng(0)
w = Tensor(gen.standard_normal((3, 2)), requires_grad=True)
x = gen.standard_normal((4, 3))
y = gen.standard_normal((4, 2))

with Tape() as tape:
    loss = ops.mse(ops.tanh(ops.matmul(x, w)), y)
(gw,) = tape.gradient(loss, [w])
print("loss", float(loss.data))
print("dL/dw\n", gw)

# %%
report = grad_check(lambda w_: ops.mse(ops.tanh(ops.matmul(x, w_)), y), [w.data])
print("max relative error per input:", report.max_rel_error, "passed:", report.passed)

# %% [markdown]
# A few Adam steps on the same problem.

# %%
state = AdamState()
for step in range(200):
    with Tape() as tape:
        loss = ops.mse(ops.tanh(ops.matmul(x, w)), y)
    (gw,) = tape.gradient(loss, [w])
    adam_step({"w": w.data}, {"w": gw}, state, lr=0.05)
    if step % 50 == 0:
        print(step, float(loss.data))
