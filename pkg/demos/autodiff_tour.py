"""A short walk through the autodiff engine: build a graph, backprop, check against finite differences."""
import numpy as np

from multires import numerics as nx
from multires.layers import GRUCell

rng = np.random.default_rng(0)

# Tensors wrap float64 arrays; requires_grad marks leaves we want gradients for.
x = nx.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
W = nx.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = nx.sum(nx.tanh(nx.matmul(x, W)))
nx.backward(loss)
print("loss", round(loss.item(), 6))
print("dL/dW\n", W.grad.round(4))

# Same thing by hand: d/dW sum(tanh(xW)) = x^T (1 - tanh^2)
by_hand = x.data.T @ (1 - np.tanh(x.data @ W.data) ** 2)
print("matches closed form:", np.allclose(W.grad, by_hand))

# grad_check compares every parameter against central differences (h = 1e-5).
cell = GRUCell(4, 3, rng)
h0 = nx.Tensor(rng.normal(size=(2, 3)))
inp = nx.Tensor(rng.normal(size=(2, 4)))
R = rng.normal(size=(2, 3))
err = nx.grad_check(lambda: nx.sum(cell(inp, h0) * R), cell.parameters())
print(f"GRU cell worst relative error {err:.2e}")

# Adam with the halving schedule used for the separation model
for epoch in (0, 79, 80, 160, 240):
    print("epoch", epoch, "lr", nx.lr_schedule(1e-3, epoch, 80))
