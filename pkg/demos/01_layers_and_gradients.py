"""A tour of the layer engine: convolution, pooling, a tiny network, and a
finite-difference check of its gradients."""
import numpy as np

from missmarple.nn import LayerSpec, Network, RMSprop, conv2d, gradient_check, maxpool2d, train_step

rng = np.random.default_rng(0)

# %% convolution on a single image (H x W x C), kernel is [k, k, Cin, N]
x = rng.random((6, 6, 1)).astype(np.float32)
edge = np.array([[1, 0, -1]] * 3, np.float32).reshape(3, 3, 1, 1)
print("valid conv:", conv2d(x, edge).shape)
print("same conv: ", conv2d(x, edge, padding="same").shape)

# %% max pooling halves each side with a 2x2 window
print("pooled:", maxpool2d(rng.random((64, 64, 3)), 2, 2).shape)

# %% a small network; shapes are checked when it is built
net = Network([
    LayerSpec("conv2d", "conv", filters=4, kernel_size=3, activation="relu"),
    LayerSpec("maxpool2d", "pool"),
    LayerSpec("flatten", "flat"),
    LayerSpec("dense", "out", units=1, activation="sigmoid"),
], input_shape=(8, 8, 3)).init_params(rng)
print(net.summary())

# %% gradients vs central differences (runs in float64 on a copy)
xb = rng.standard_normal((2, 8, 8, 3))
err = gradient_check(net, xb, np.array([0, 1]), h=1e-5)
print(f"worst relative gradient error: {err:.2e}")

# %% a few RMSprop steps on a toy batch
opt = RMSprop(lr=1e-2)
y = np.array([0, 1, 0, 1])
xb = np.stack([np.full((8, 8, 3), v, np.float32) for v in (0.1, 0.9, 0.2, 0.8)])
for step in range(20):
    loss, acc = train_step(net, xb, y, opt, rng)
    if step % 5 == 0:
        print(f"step {step:2d}  loss {loss:.4f}  acc {acc:.2f}")
