"""A small 1-D convolutional regressor, implemented from scratch.

The network maps a short feature vector to one scalar: a valid 1-D
convolution over the input, ReLU, max pooling, one ReLU-activated dense
layer, and a linear output neuron. All math is float64 numpy; gradients
are computed analytically and checked against finite differences.

Parameters live in one flat vector so the optimizer can update them with
a handful of vector operations; named views expose the conventional
weight shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._validation import require_positive


class InvalidArchitectureError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite training loss at epoch {epoch}")


@dataclass(frozen=True)
class Architecture:
    """Layer sizing. Defaults: 4 inputs -> conv(3)x64 -> pool(2) -> fc 64 -> 1."""

    input_len: int = 4
    input_maps: int = 1
    conv_channels: int = 64
    conv_kernel: int = 3
    pool_kernel: int = 2
    fc_neurons: int = 64

    def validate(self) -> None:
        for name in ("input_len", "input_maps", "conv_channels",
                     "conv_kernel", "pool_kernel", "fc_neurons"):
            if getattr(self, name) < 1:
                raise InvalidArchitectureError(f"{name} must be >= 1")
        if self.conv_kernel > self.input_len:
            raise InvalidArchitectureError(
                f"conv kernel {self.conv_kernel} exceeds input length "
                f"{self.input_len}"
            )
        if self.pooled_len < 1:
            raise InvalidArchitectureError(
                "pooling leaves no output positions"
            )

    @property
    def conv_len(self) -> int:
        return self.input_len - self.conv_kernel + 1

    @property
    def pooled_len(self) -> int:
        return self.conv_len // self.pool_kernel

    @property
    def flat_len(self) -> int:
        return self.conv_channels * self.pooled_len

    def param_count(self) -> int:
        z, g, k = self.conv_channels, self.input_maps, self.conv_kernel
        return (
            z * g * k + z
            + self.fc_neurons * self.flat_len + self.fc_neurons
            + self.fc_neurons + 1
        )


class NetworkParams:
    """Flat float64 parameter vector with named shaped views."""

    def __init__(self, arch: Architecture, flat: np.ndarray | None = None):
        arch.validate()
        self.arch = arch
        n = arch.param_count()
        if flat is None:
            flat = np.zeros(n)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ValueError(f"expected flat vector of length {n}, got {flat.shape}")
        self.flat = flat
        z, g, k = arch.conv_channels, arch.input_maps, arch.conv_kernel
        fc, fl = arch.fc_neurons, arch.flat_len
        bounds = np.cumsum([0, z * g * k, z, fc * fl, fc, fc, 1])
        self._slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    # shaped views into the flat vector (writes propagate)
    @property
    def conv_w(self) -> np.ndarray:
        a = self.arch
        return self.flat[self._slices[0]].reshape(
            a.conv_channels, a.input_maps, a.conv_kernel
        )

    @property
    def conv_b(self) -> np.ndarray:
        return self.flat[self._slices[1]]

    @property
    def fc1_w(self) -> np.ndarray:
        a = self.arch
        return self.flat[self._slices[2]].reshape(a.fc_neurons, a.flat_len)

    @property
    def fc1_b(self) -> np.ndarray:
        return self.flat[self._slices[3]]

    @property
    def out_w(self) -> np.ndarray:
        return self.flat[self._slices[4]].reshape(1, self.arch.fc_neurons)

    @property
    def out_b(self) -> np.ndarray:
        return self.flat[self._slices[5]]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.flat.copy())


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int | None = None  # None: min(64, dataset size)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when given")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        require_positive("adam_eps", self.adam_eps)


def init_network(arch: Architecture, seed: int) -> NetworkParams:
    """Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases.

    Weight blocks are drawn in a fixed order (conv, dense, output) from one
    generator, so identical seeds give identical parameters.
    """
    arch.validate()
    rng = np.random.default_rng(seed)
    params = NetworkParams(arch)

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    g, k = arch.input_maps, arch.conv_kernel
    params.conv_w[...] = glorot(
        params.conv_w.shape, g * k, arch.conv_channels * k
    )
    params.fc1_w[...] = glorot(
        params.fc1_w.shape, arch.flat_len, arch.fc_neurons
    )
    params.out_w[...] = glorot(params.out_w.shape, arch.fc_neurons, 1)
    return params


def _check_inputs(arch: Architecture, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    width = arch.input_maps * arch.input_len
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(
            f"expected inputs of shape (B, {width}), got {x.shape}"
        )
    return x


def _windows(arch: Architecture, x: np.ndarray) -> np.ndarray:
    """Sliding conv windows, flattened to (B, conv_len, maps*kernel)."""
    b = x.shape[0]
    maps = x.reshape(b, arch.input_maps, arch.input_len)
    win = np.lib.stride_tricks.sliding_window_view(
        maps, arch.conv_kernel, axis=2
    )  # (B, G, T, K)
    win = win.transpose(0, 2, 1, 3)  # (B, T, G, K)
    t = arch.conv_len
    return np.ascontiguousarray(win).reshape(b, t, arch.input_maps * arch.conv_kernel)


def _forward_cached(params: NetworkParams, win: np.ndarray):
    """Forward pass from precomputed windows; returns prediction and cache.

    ReLU and max pooling commute (both monotone), so the conv activation is
    pooled first and rectified once: values and gradients are identical to
    the rectify-then-pool order, with one winner per pool window.
    """
    a = params.arch
    b, t, gk = win.shape
    wc = params.conv_w.reshape(a.conv_channels, gk)
    pre = win.reshape(b * t, gk) @ wc.T
    pre += params.conv_b
    pre = pre.reshape(b, t, a.conv_channels)
    if a.conv_len == 2 and a.pool_kernel == 2:
        # single pool window of two positions: pick with one comparison
        a0 = pre[:, 0, :]
        a1 = pre[:, 1, :]
        winner = a0 >= a1  # ties: first position
        flat = np.where(winner, a0, a1)
        np.maximum(flat, 0.0, out=flat)
    else:
        tp = a.pooled_len
        pool = pre[:, : tp * a.pool_kernel, :].reshape(
            b, tp, a.pool_kernel, a.conv_channels
        )
        winner = pool.argmax(axis=2)  # ties: first position
        pooled = np.take_along_axis(pool, winner[:, :, None, :], axis=2)[:, :, 0, :]
        flat = pooled.reshape(b, a.flat_len).copy()
        np.maximum(flat, 0.0, out=flat)
    z1 = flat @ params.fc1_w.T
    z1 += params.fc1_b
    h1 = np.maximum(z1, 0.0)
    pred = h1 @ params.out_w[0]
    pred += params.out_b[0]
    return pred, (win, pre, winner, flat, z1, h1)


def _forward_exact(params: NetworkParams, win: np.ndarray) -> np.ndarray:
    # einsum keeps each row's reduction order independent of the batch
    # size, so predicting points one at a time or all at once gives
    # bit-identical results (BLAS matmuls do not guarantee that)
    a = params.arch
    b = win.shape[0]
    wc = params.conv_w.reshape(a.conv_channels, -1)
    pre = np.einsum("btk,zk->btz", win, wc)
    pre += params.conv_b
    tp = a.pooled_len
    pool = pre[:, : tp * a.pool_kernel, :].reshape(
        b, tp, a.pool_kernel, a.conv_channels
    )
    flat = pool.max(axis=2).reshape(b, a.flat_len)
    np.maximum(flat, 0.0, out=flat)
    z1 = np.einsum("bf,nf->bn", flat, params.fc1_w)
    z1 += params.fc1_b
    h1 = np.maximum(z1, 0.0)
    pred = np.einsum("bn,n->b", h1, params.out_w[0])
    pred += params.out_b[0]
    return pred


def forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Predict scalars for a batch of inputs, shape (B, input width)."""
    x = _check_inputs(params.arch, x)
    return _forward_exact(params, _windows(params.arch, x))


def mse_loss(targets: np.ndarray, predictions: np.ndarray) -> float:
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.shape != predictions.shape:
        raise ValueError("targets and predictions must have equal shape")
    if targets.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    diff = predictions - targets
    return float(diff @ diff / diff.size)


def _loss_and_grads(
    params: NetworkParams,
    win: np.ndarray,
    y: np.ndarray,
    grads: NetworkParams,
    loss_scale: float = 1.0,
) -> float:
    """MSE loss and its gradient w.r.t. every parameter (into grads.flat)."""
    a = params.arch
    b = win.shape[0]
    pred, (win, pre, winner, flat, z1, h1) = _forward_cached(params, win)
    diff = pred - y
    loss = float(diff @ diff / b) * loss_scale

    d = diff * (2.0 * loss_scale / b)
    grads.out_w[0, :] = d @ h1
    grads.out_b[0] = d.sum()
    dh1 = np.outer(d, params.out_w[0])
    dh1[z1 <= 0.0] = 0.0
    grads.fc1_w[...] = dh1.T @ flat
    grads.fc1_b[...] = dh1.sum(axis=0)
    dflat = dh1 @ params.fc1_w
    dflat[flat <= 0.0] = 0.0
    if a.conv_len == 2 and a.pool_kernel == 2:
        dpre = np.empty((b, 2, a.conv_channels))
        np.multiply(dflat, winner, out=dpre[:, 0, :])
        np.multiply(dflat, ~winner, out=dpre[:, 1, :])
    else:
        dpool = dflat.reshape(b, a.pooled_len, a.conv_channels)
        dpre4 = np.zeros((b, a.pooled_len, a.pool_kernel, a.conv_channels))
        np.put_along_axis(
            dpre4, winner[:, :, None, :], dpool[:, :, None, :], axis=2
        )
        dpre = dpre4.reshape(b, a.pooled_len * a.pool_kernel, a.conv_channels)
        tail = a.conv_len - a.pooled_len * a.pool_kernel
        if tail:
            # positions past the last full pool window never reach the output
            dpre = np.concatenate(
                [dpre, np.zeros((b, tail, a.conv_channels))], axis=1
            )
    dpre2 = dpre.reshape(b * a.conv_len, a.conv_channels)
    win2 = win.reshape(b * a.conv_len, -1)
    grads.conv_w.reshape(a.conv_channels, -1)[...] = dpre2.T @ win2
    grads.conv_b[...] = dpre2.sum(axis=0)
    return loss


def train(
    params: NetworkParams,
    x: np.ndarray,
    y: np.ndarray,
    hyper: Hyperparameters,
) -> tuple[NetworkParams, np.ndarray]:
    """Minibatch Adam on the MSE. Returns trained params and per-epoch loss.

    The input params are not modified. Each epoch reshuffles with the
    training seed's generator and records the size-weighted mean of its
    minibatch losses. Raises NonFiniteLossError if the loss diverges.
    """
    hyper.validate()
    x = _check_inputs(params.arch, x)
    y = np.asarray(y, dtype=np.float64)
    m = x.shape[0]
    if y.shape != (m,):
        raise ValueError(f"expected targets of shape ({m},), got {y.shape}")
    if m == 0:
        raise ValueError("cannot train on an empty set")
    batch = hyper.batch_size if hyper.batch_size is not None else min(64, m)
    batch = min(batch, m)

    params = params.copy()
    win_all = _windows(params.arch, x)
    rng = np.random.default_rng(hyper.seed)
    grads = NetworkParams(params.arch)
    adam_m = np.zeros_like(params.flat)
    adam_v = np.zeros_like(params.flat)
    scratch = np.empty_like(params.flat)
    t = 0
    lr, b1, b2, eps = (
        hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.adam_eps
    )
    history = np.empty(hyper.epochs)
    for epoch in range(hyper.epochs):
        order = rng.permutation(m)
        acc = 0.0
        for start in range(0, m, batch):
            idx = order[start : start + batch]
            loss = _loss_and_grads(params, win_all[idx], y[idx], grads)
            acc += loss * len(idx)
            t += 1
            g = grads.flat
            adam_m *= b1
            np.multiply(g, 1.0 - b1, out=scratch)
            adam_m += scratch
            adam_v *= b2
            np.multiply(g, g, out=scratch)
            scratch *= 1.0 - b2
            adam_v += scratch
            np.divide(adam_v, 1.0 - b2**t, out=scratch)
            np.sqrt(scratch, out=scratch)
            scratch += eps
            np.divide(adam_m, scratch, out=scratch)
            scratch *= lr / (1.0 - b1**t)
            params.flat -= scratch
        epoch_loss = acc / m
        if not np.isfinite(epoch_loss):
            raise NonFiniteLossError(epoch)
        history[epoch] = epoch_loss
    return params, history


def grad_check(
    params: NetworkParams,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Components where both gradients are below 1e-10 in magnitude are
    skipped (their ratio is noise).
    """
    x = _check_inputs(params.arch, x)
    y = np.asarray(y, dtype=np.float64)
    win = _windows(params.arch, x)
    buf = NetworkParams(params.arch)
    _loss_and_grads(params, win, y, buf)
    analytic = buf.flat

    probe = params.copy()
    worst = 0.0
    for i in range(len(probe.flat)):
        orig = probe.flat[i]
        probe.flat[i] = orig + epsilon
        up, _ = _forward_cached(probe, win)
        probe.flat[i] = orig - epsilon
        dn, _ = _forward_cached(probe, win)
        probe.flat[i] = orig
        numeric = (mse_loss(y, up) - mse_loss(y, dn)) / (2.0 * epsilon)
        scale = max(abs(numeric), abs(analytic[i]))
        if scale < 1e-10:
            continue
        worst = max(worst, abs(numeric - analytic[i]) / scale)
    return worst


def with_seed(hyper: Hyperparameters, seed: int) -> Hyperparameters:
    return replace(hyper, seed=seed)
