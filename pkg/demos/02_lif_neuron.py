"""A single LIF neuron and its surrogate gradient.

Drives one neuron with a constant current and prints the membrane trace, then
shows the triangle surrogate used in place of the step function's derivative.
"""
import numpy as np

from spikefuse.backbones import LIFLayerState, lif_step
from spikefuse.numerics import Tensor, ops

alpha, u_th = 0.7, 1.0
state = LIFLayerState.zeros((1,))
print("step  input   u      spike")
for n, current in enumerate([0.4] * 8 + [0.0] * 3):
    state, o = lif_step(state, Tensor([current]), alpha, u_th)
    print(f"{n:4d}  {current:.2f}  {state.u.data[0]:.4f}  {int(o.data[0])}")

# spike-gated reset: the neuron that just fired starts from its input alone
x = np.linspace(-2, 2, 9)
print("\nu - u_th  surrogate")
for v, g in zip(x, ops.surrogate_grad(x)):
    print(f"{v:7.2f}  {g:.2f}")

# gradient of a spike w.r.t. the threshold is minus the surrogate
th = Tensor([1.0], requires_grad=True)
ops.sum(ops.spike(ops.sub(Tensor([0.75, 1.2]), th))).backward()
print(f"\nd(spikes)/d(u_th) for u = 0.75, 1.2: {th.grad[0]:.2f}")
