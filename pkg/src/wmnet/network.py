"""The five mapping networks and their composition.

Parameter names are dotted paths grouped by network prefix:

* ``mu.``    watermark -> feature image (theta1)
* ``sigma.`` feature image + cover -> marked image, plus loss-feature blocks (theta2)
* ``phi.``   invariance output -> recovered feature image (theta3)
* ``gamma.`` feature image -> watermark (theta4)
* ``tau.``   invariance layer (theta5)

Images are channels-last and may carry a leading batch axis.  The spatial
ratio between cover and watermark is fixed at 4 so that the 48-channel
watermark features reshape exactly onto a 3-channel cover.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

BLOCK_FILTERS = 32
RESHAPE_FACTOR = 4
WF_CHANNELS = 3
DEFAULT_N = 16
DEFAULT_LAMBDA = 0.01

GROUPS = {
    "theta1": "mu.",
    "theta2": "sigma.",
    "theta3": "phi.",
    "theta4": "gamma.",
    "theta5": "tau.",
}
EMBEDDER_PREFIXES = ("mu.", "sigma.")


@dataclass
class InceptionBlockParams:
    """Tensors of one inception residual block operating at ``channels`` channels."""

    b1_w: Tensor
    b1_b: Tensor
    b3_w: Tensor
    b3_b: Tensor
    b5a_w: Tensor
    b5a_b: Tensor
    b5b_w: Tensor
    b5b_b: Tensor
    merge_w: Tensor
    merge_b: Tensor

    @property
    def channels(self) -> int:
        return self.b1_w.shape[2]

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str) -> "InceptionBlockParams":
        return cls(**{f: params[f"{prefix}." + f.replace("_", ".")]
                      for f in cls.__dataclass_fields__})


_BLOCK_LAYOUT = {
    # name: (kernel, in_channels or None for block width, out_channels or None)
    "b1": (1, None, BLOCK_FILTERS),
    "b3": (3, None, BLOCK_FILTERS),
    "b5a": (3, None, BLOCK_FILTERS),
    "b5b": (3, BLOCK_FILTERS, BLOCK_FILTERS),
    "merge": (1, 3 * BLOCK_FILTERS, None),
}


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _conv_init(rng, k, cin, cout, kind, dtype):
    fan_in = k * k * cin
    fan_out = k * k * cout
    if kind == "relu":
        bound = np.sqrt(6.0 / fan_in)
    else:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    return _uniform(rng, (k, k, cin, cout), bound, dtype), np.zeros(cout, dtype)


def _block_init(rng, prefix, channels, dtype, out):
    for name, (k, cin, cout) in _BLOCK_LAYOUT.items():
        cin = channels if cin is None else cin
        cout = channels if cout is None else cout
        kind = "linear" if name == "merge" else "relu"
        w, b = _conv_init(rng, k, cin, cout, kind, dtype)
        out[f"{prefix}.{name}.w"] = w
        out[f"{prefix}.{name}.b"] = b


def init_params(n: int = DEFAULT_N, seed: int = 0, dtype=None) -> dict[str, Tensor]:
    """Fresh parameters for every network.

    ReLU layers use He-uniform bounds, linear/sigmoid/tanh layers Xavier-uniform;
    all biases start at zero.
    """
    if n < 3:
        raise ShapeError(f"redundancy N must be >= 3, got {n}")
    dtype = dtype or T.default_dtype()
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}

    def conv(name, k, cin, cout, kind):
        arrays[f"{name}.w"], arrays[f"{name}.b"] = _conv_init(rng, k, cin, cout, kind, dtype)

    conv("mu.expand1", 1, 1, 24, "relu")
    _block_init(rng, "mu.block1", 24, dtype, arrays)
    conv("mu.expand2", 1, 24, 48, "relu")
    _block_init(rng, "mu.block2", 48, dtype, arrays)

    _block_init(rng, "sigma.f1", 3, dtype, arrays)
    _block_init(rng, "sigma.fuse", 6, dtype, arrays)
    conv("sigma.out", 1, 6, 3, "sigmoid")
    _block_init(rng, "sigma.f2", 3, dtype, arrays)

    bound = np.sqrt(6.0 / (3 + n))
    arrays["tau.w"] = _uniform(rng, (3, n), bound, dtype)
    arrays["tau.b"] = np.zeros(n, dtype)

    conv("phi.inp", 1, n, 3, "relu")
    _block_init(rng, "phi.block1", 3, dtype, arrays)
    _block_init(rng, "phi.block2", 3, dtype, arrays)

    _block_init(rng, "gamma.block1", 48, dtype, arrays)
    conv("gamma.reduce1", 1, 48, 24, "relu")
    _block_init(rng, "gamma.block2", 24, dtype, arrays)
    conv("gamma.reduce2", 1, 24, 1, "sigmoid")

    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def group_params(params: Mapping[str, Tensor], group: str) -> dict[str, Tensor]:
    prefix = GROUPS[group]
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def embedder_params(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if k.startswith(EMBEDDER_PREFIXES)}


def redundancy(params: Mapping[str, Tensor]) -> int:
    return params["tau.w"].shape[1]


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _conv(x, params, name, act):
    return T.activation(T.conv2d(x, params[f"{name}.w"], params[f"{name}.b"]), act)


def block_forward(x: Tensor, p: InceptionBlockParams) -> Tensor:
    """Inception residual block: ``x + merge(concat(1x1, 3x3, 3x3∘3x3))``."""
    if x.ndim not in (3, 4) or x.shape[-1] != p.channels:
        raise ShapeError(f"block expects {p.channels} channels, got input shape {x.shape}")
    a = T.relu(T.conv2d(x, p.b1_w, p.b1_b))
    b = T.relu(T.conv2d(x, p.b3_w, p.b3_b))
    c = T.relu(T.conv2d(x, p.b5a_w, p.b5a_b))
    c = T.relu(T.conv2d(c, p.b5b_w, p.b5b_b))
    merged = T.conv2d(T.concat([a, b, c], axis=-1), p.merge_w, p.merge_b)
    return x + merged


def _block(x, params, prefix):
    return block_forward(x, InceptionBlockParams.from_params(params, prefix))


def _check_hw(x: Tensor, channels: int, what: str):
    if x.ndim not in (3, 4) or x.shape[-1] != channels:
        raise ShapeError(f"{what}: expected [..., H, W, {channels}], got {x.shape}")


def mu_forward(w: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Watermark ``[h, w, 1]`` -> feature image ``[4h, 4w, 3]``."""
    _check_hw(w, 1, "mu")
    x = _conv(w, params, "mu.expand1", "relu")
    x = _block(x, params, "mu.block1")
    x = _conv(x, params, "mu.expand2", "relu")
    x = _block(x, params, "mu.block2")
    return T.depth_to_space(x, RESHAPE_FACTOR)


def gamma_forward(wf: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Feature image ``[4h, 4w, 3]`` -> watermark probabilities ``[h, w, 1]``."""
    _check_hw(wf, WF_CHANNELS, "gamma")
    x = T.space_to_depth(wf, RESHAPE_FACTOR)
    x = _block(x, params, "gamma.block1")
    x = _conv(x, params, "gamma.reduce1", "relu")
    x = _block(x, params, "gamma.block2")
    return _conv(x, params, "gamma.reduce2", "sigmoid")


def sigma_forward(wf: Tensor, c: Tensor, params: Mapping[str, Tensor]):
    """Fuse the feature image with the cover.

    Returns ``(m, (f1(wf), f1(m), f2(wf), f2(m)))`` where ``f1`` is the block
    applied to ``wf`` before fusion and ``f2`` the dedicated loss block stacked
    on ``f1``.
    """
    _check_hw(wf, WF_CHANNELS, "sigma (feature image)")
    _check_hw(c, 3, "sigma (cover)")
    if wf.shape[-3:-1] != c.shape[-3:-1]:
        raise ShapeError(f"sigma: feature image {wf.shape} and cover {c.shape} differ spatially")
    f1_wf = _block(wf, params, "sigma.f1")
    fused = _block(T.concat([f1_wf, c], axis=-1), params, "sigma.fuse")
    m = _conv(fused, params, "sigma.out", "sigmoid")
    f1_m = _block(m, params, "sigma.f1")
    f2_wf = _block(f1_wf, params, "sigma.f2")
    f2_m = _block(f1_m, params, "sigma.f2")
    return m, (f1_wf, f1_m, f2_wf, f2_m)


def embed_forward(wf: Tensor, c: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Marked image only; skips the loss-feature blocks."""
    _check_hw(wf, WF_CHANNELS, "sigma (feature image)")
    _check_hw(c, 3, "sigma (cover)")
    f1_wf = _block(wf, params, "sigma.f1")
    fused = _block(T.concat([f1_wf, c], axis=-1), params, "sigma.fuse")
    return _conv(fused, params, "sigma.out", "sigmoid")


def tau_forward(m: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Invariance layer: per-pixel ``tanh(m @ omega + b)`` with ``omega`` of shape ``[3, N]``.

    The output doubles as the hidden activations used by the contraction
    penalty.
    """
    _check_hw(m, 3, "tau")
    return T.tanh(T.pointwise_linear(m, params["tau.w"], params["tau.b"]))


def phi_forward(t: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    n = redundancy(params)
    if t.ndim not in (3, 4) or t.shape[-1] != n:
        raise ShapeError(f"phi: checkpoint has N={n}, input has {t.shape[-1]} channels")
    x = _conv(t, params, "phi.inp", "relu")
    x = _block(x, params, "phi.block1")
    return _block(x, params, "phi.block2")


def extract_forward(m: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Extractor path tau -> phi -> gamma, returning watermark probabilities."""
    return gamma_forward(phi_forward(tau_forward(m, params), params), params)


@dataclass
class ForwardResult:
    w_f: Tensor
    m: Tensor
    loss_feats: tuple
    t: Tensor
    h: Tensor
    w_f_hat: Tensor
    w_hat: Tensor


def full_forward(w: Tensor, c: Tensor, params: Mapping[str, Tensor]) -> ForwardResult:
    if w.ndim != c.ndim:
        raise ShapeError(f"watermark {w.shape} and cover {c.shape} must both be batched or unbatched")
    hw, ww = w.shape[-3:-1]
    if c.shape[-3:-1] != (hw * RESHAPE_FACTOR, ww * RESHAPE_FACTOR):
        raise ShapeError(f"cover {c.shape} must be {RESHAPE_FACTOR}x the watermark {w.shape} spatially")
    w_f = mu_forward(w, params)
    m, feats = sigma_forward(w_f, c, params)
    t = tau_forward(m, params)
    w_f_hat = phi_forward(t, params)
    w_hat = gamma_forward(w_f_hat, params)
    return ForwardResult(w_f=w_f, m=m, loss_feats=feats, t=t, h=t, w_f_hat=w_f_hat, w_hat=w_hat)
