"""Seven-layer convolutional encoder with hand-written backward passes.

Activations are kept channel-last, ``(batch, height, width, channels)``,
because the im2col product then reshapes into the next layer's input
without a transpose. The single-image helpers ``conv2d`` and ``maxpool``
accept the channel-first ``C x H x W`` layout used elsewhere for images.

Each conv block is: 3x3 same-padded convolution, leaky ReLU (alpha 0.2),
batch normalization, then the optional max pool from the schedule.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError

ALPHA = 0.2
FULL_WIDTHS = (64, 128, 256, 256, 512, 512, 512)
# (height, width) pool extents after each conv layer; None means no pooling
FULL_POOLS = ((2, 2), (2, 2), (2, 1), None, (2, 1), None, (4, 1))
INPUT_HEIGHT = 64


@dataclass(frozen=True)
class EncoderConfig:
    widths: tuple = FULL_WIDTHS
    pools: tuple = FULL_POOLS
    alpha: float = ALPHA
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.widths) != len(self.pools):
            raise DimensionError("one pool entry is required per conv layer")
        h = w = 1
        for p in self.pools:
            if p is not None:
                h *= p[0]
                w *= p[1]
        if h != INPUT_HEIGHT or w != 4:
            raise DimensionError(
                f"pool schedule reduces height by {h} and width by {w}; need 64 and 4")

    @property
    def out_dim(self):
        return self.widths[-1]

    def height_trace(self):
        """Feature-map heights after every pooling stage, starting at 64."""
        trace = [INPUT_HEIGHT]
        h = INPUT_HEIGHT
        for p in self.pools:
            if p is not None:
                h //= p[0]
                trace.append(h)
        return trace


@dataclass
class ConvLayer:
    """3x3 convolution weights, ``kernel`` shaped (out_ch, in_ch, 3, 3)."""
    kernel: np.ndarray
    bias: np.ndarray
    alpha: float = ALPHA

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (3, 3):
            raise DimensionError(f"kernel must be (out, in, 3, 3), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise DimensionError("bias length must equal output channels")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros_like(self.gamma)
        if self.running_var is None:
            self.running_var = np.ones_like(self.gamma)


# -- convolution ---------------------------------------------------------

def _im2col(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # b, h, w, c, 3, 3
    return win.reshape(b * h * w, c * 9)


def _colsum(a2d):
    """Column sums of a tall 2-D array via a BLAS product."""
    return np.ones(a2d.shape[0], a2d.dtype) @ a2d


def _leaky_backward(dout, pre, alpha):
    d = dout.copy()
    d[pre < 0] *= alpha
    return d


def conv_forward(x, kernel, bias, alpha=ALPHA):
    """Channel-last batched conv + leaky ReLU. Returns (output, cache)."""
    b, h, w, c = x.shape
    if kernel.shape[1] != c:
        raise DimensionError(
            f"input has {c} channels but kernel {kernel.shape} expects {kernel.shape[1]}")
    cout = kernel.shape[0]
    cols = _im2col(x)
    kmat = kernel.reshape(cout, c * 9)
    pre = (cols @ kmat.T).reshape(b, h, w, cout)
    pre += bias
    out = np.maximum(pre, alpha * pre)  # leaky ReLU for 0 < alpha < 1
    return out, (x.shape, cols, pre, kernel, alpha)


def conv_backward(dout, cache):
    """Returns (dx, dkernel, dbias)."""
    shape, cols, pre, kernel, alpha = cache
    b, h, w, c = shape
    cout = kernel.shape[0]
    dflat = _leaky_backward(dout, pre, alpha).reshape(-1, cout)
    dkernel = (dflat.T @ cols).reshape(kernel.shape)
    dbias = _colsum(dflat)
    dcols = (dflat @ kernel.reshape(cout, c * 9)).reshape(b, h, w, c, 3, 3)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dkernel, dbias


def conv2d(image, layer):
    """Single ``C x H x W`` image through a same-padded conv + leaky ReLU."""
    if image.ndim != 3:
        raise DimensionError(f"expected C x H x W input, got shape {image.shape}")
    x = image.transpose(1, 2, 0)[None]
    out, _ = conv_forward(x, layer.kernel, layer.bias, layer.alpha)
    return out[0].transpose(2, 0, 1)


# -- max pooling ---------------------------------------------------------

def pool_forward(x, ph, pw):
    """Non-overlapping max pool; ties resolve to the first window element
    in row-major order."""
    b, h, w, c = x.shape
    if h % ph or w % pw:
        raise DimensionError(f"feature map {h}x{w} is not divisible by pool {ph}x{pw}")
    views = [x[:, a::ph, e::pw, :] for a in range(ph) for e in range(pw)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    idx = np.full(out.shape, len(views) - 1, dtype=np.int8)
    for k in reversed(range(len(views) - 1)):
        idx[views[k] == out] = k
    return out, (x.shape, idx, ph, pw)


def pool_backward(dout, cache):
    shape, idx, ph, pw = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    k = 0
    for a in range(ph):
        for e in range(pw):
            dx[:, a::ph, e::pw, :] = np.where(idx == k, dout, 0)
            k += 1
    return dx


def maxpool(image, pool_h, pool_w):
    """Non-overlapping max pool of a ``C x H x W`` image."""
    if image.ndim != 3:
        raise DimensionError(f"expected C x H x W input, got shape {image.shape}")
    out, _ = pool_forward(image.transpose(1, 2, 0)[None], pool_h, pool_w)
    return out[0].transpose(2, 0, 1)


# -- batch normalization -------------------------------------------------

def bn_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Per-channel normalization over (batch, height, width).

    In train mode the running statistics are updated in place.
    """
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    if train:
        n = flat.shape[0]
        if n < 2:
            raise DimensionError("batch norm in train mode needs at least 2 values per channel")
        mean = _colsum(flat) / n
        xc = flat - mean
        var = _colsum(xc * xc) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
        xc = flat - mean
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    out = xhat * gamma
    out += beta
    return out.reshape(x.shape), (xhat, inv, gamma, train)


def bn_backward(dout, cache):
    xhat, inv, gamma, train = cache
    shape = dout.shape
    d = dout.reshape(xhat.shape)
    dgamma = _colsum(d * xhat)
    dbeta = _colsum(d)
    if not train:
        return (d * (gamma * inv)).reshape(shape), dgamma, dbeta
    n = d.shape[0]
    # dx = gamma*inv/n * (n*d - sum(d) - xhat*sum(d*xhat))
    dx = d * n
    dx -= dbeta
    dx -= xhat * dgamma
    dx *= gamma * inv / n
    return dx.reshape(shape), dgamma, dbeta


def batchnorm(x, bn, mode="train"):
    """``B x C x H x W`` batch norm against a :class:`BatchNorm` state."""
    if x.ndim != 4:
        raise DimensionError(f"expected B x C x H x W input, got shape {x.shape}")
    out, _ = bn_forward(x.transpose(0, 2, 3, 1), bn.gamma, bn.beta, bn.running_mean,
                        bn.running_var, mode == "train", bn.momentum, bn.eps)
    return out.transpose(0, 3, 1, 2)


# -- whole encoder -------------------------------------------------------

def init_encoder(config, rng, dtype=np.float32, prefix="enc"):
    """He-style init for leaky ReLU; returns (params, buffers)."""
    params, buffers = {}, {}
    cin = 1
    for i, cout in enumerate(config.widths):
        std = np.sqrt(2.0 / (cin * 9 * (1.0 + config.alpha ** 2)))
        params[f"{prefix}.{i}.kernel"] = rng.normal((cout, cin, 3, 3), std, dtype)
        params[f"{prefix}.{i}.bias"] = np.zeros(cout, dtype)
        params[f"{prefix}.{i}.gamma"] = np.ones(cout, dtype)
        params[f"{prefix}.{i}.beta"] = np.zeros(cout, dtype)
        buffers[f"{prefix}.{i}.running_mean"] = np.zeros(cout, dtype)
        buffers[f"{prefix}.{i}.running_var"] = np.ones(cout, dtype)
        cin = cout
    return params, buffers


def encoder_forward(params, buffers, images, config, train, prefix="enc", trace=None):
    """Encode a batch of line images.

    ``images`` is ``(batch, 64, width)`` with width divisible by 4. Returns
    ``(features, cache)`` where features is ``(batch, width // 4, out_dim)``.
    If ``trace`` is a list, the feature-map height after each pool is appended.
    """
    if images.ndim != 3 or images.shape[1] != INPUT_HEIGHT:
        raise DimensionError(f"expected (batch, 64, width) images, got {images.shape}")
    if images.shape[2] % 4 or images.shape[2] < 4:
        raise DimensionError(f"image width {images.shape[2]} must be a positive multiple of 4")
    x = images[..., None]
    caches = []
    if trace is not None:
        trace.append(x.shape[1])
    for i, pool in enumerate(config.pools):
        p = f"{prefix}.{i}"
        x, cc = conv_forward(x, params[p + ".kernel"], params[p + ".bias"], config.alpha)
        x, bc = bn_forward(x, params[p + ".gamma"], params[p + ".beta"],
                           buffers[p + ".running_mean"], buffers[p + ".running_var"],
                           train, config.bn_momentum, config.bn_eps)
        pc = None
        if pool is not None:
            x, pc = pool_forward(x, *pool)
            if trace is not None:
                trace.append(x.shape[1])
        caches.append((cc, bc, pc))
    return x[:, 0], caches


def encoder_backward(dfeat, caches, prefix="enc"):
    """Backward through the encoder; returns a grads dict (input grad dropped)."""
    grads = {}
    dx = dfeat[:, None]
    for i in reversed(range(len(caches))):
        cc, bc, pc = caches[i]
        p = f"{prefix}.{i}"
        if pc is not None:
            dx = pool_backward(dx, pc)
        dx, grads[p + ".gamma"], grads[p + ".beta"] = bn_backward(dx, bc)
        if i == 0:
            # gradient w.r.t. the image itself is never needed
            _, grads[p + ".kernel"], grads[p + ".bias"] = _conv_param_grads(dx, cc)
        else:
            dx, grads[p + ".kernel"], grads[p + ".bias"] = conv_backward(dx, cc)
    return grads


def encoder_input_grad(dfeat, caches):
    """Gradient w.r.t. the input images (used by gradient checks)."""
    dx = dfeat[:, None]
    for cc, bc, pc in reversed(caches):
        if pc is not None:
            dx = pool_backward(dx, pc)
        dx, _, _ = bn_backward(dx, bc)
        dx, _, _ = conv_backward(dx, cc)
    return dx[..., 0]


def _conv_param_grads(dout, cache):
    shape, cols, pre, kernel, alpha = cache
    cout = kernel.shape[0]
    dflat = _leaky_backward(dout, pre, alpha).reshape(-1, cout)
    return None, (dflat.T @ cols).reshape(kernel.shape), _colsum(dflat)


def encode(image, params, buffers, config=EncoderConfig(), train=False):
    """Encode a single ``1 x 64 x W`` image into a ``(W // 4, out_dim)`` sequence."""
    image = np.asarray(image)
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise DimensionError(f"expected a single-channel image, got {image.shape}")
        image = image[0]
    if image.ndim != 2 or image.shape[0] != INPUT_HEIGHT:
        raise DimensionError(f"image height must be {INPUT_HEIGHT}, got shape {image.shape}")
    feats, _ = encoder_forward(params, buffers, image[None], config, train)
    return feats[0]
