"""A tour of the numpy network: forward pass, gradients, optimizer, checkpoint."""

# %% A 3-16-16-2 rectifier network with uniform fan-in initialisation
import numpy as np

from safedqn import nn

net = nn.Network.create([3, 16, 16, 2], seed=0)
print("layer widths", net.sizes)
x = np.array([0.5, -1.0, 0.25])
print("Q(x) =", net(x))

# %% Gradients of sum(output * g) flow to parameters and, on request, to the input
g = np.array([1.0, 0.0])
bundle = nn.backward(net, x, g, want_input_grad=True)
print("d out0 / d x =", bundle.input_grad)

# a quick central-difference check on the first input coordinate
h = 1e-5
fd = (net(x + [h, 0, 0])[0] - net(x - [h, 0, 0])[0]) / (2 * h)
print(f"finite difference {fd:.8f} vs analytic {bundle.input_grad[0]:.8f}")

# %% Regress output 0 toward 1.0 with Adam
opt = nn.OptimizerState.for_network(net, "adam", learning_rate=1e-2)
for step in range(200):
    err = net(x)[0] - 1.0
    nn.apply_gradients(net, nn.backward(net, x, np.array([2 * err, 0.0])), opt)
print("after 200 Adam steps, out0 =", round(float(net(x)[0]), 6))

# %% Target networks: tau = 1 copies, tau = 0.5 averages
target = nn.Network.create([3, 16, 16, 2], seed=1)
nn.polyak_blend(target, net, 1.0)
print("hard copy identical:", np.array_equal(target(x), net(x)))

# %% Binary checkpoints round-trip bit for bit
blob = nn.serialize(net)
back = nn.deserialize(blob)
print(f"{len(blob)} bytes, identical parameters:",
      all(a.tobytes() == b.tobytes() for a, b in zip(net.params(), back.params())))
