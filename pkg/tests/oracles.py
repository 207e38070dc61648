"""Independent reference implementations shared by several test modules."""

import numpy as np


def conv2d_reference(x, k, b):
    """Quadruple loop over output pixel, output channel, tap and input channel."""
    H, W, cin = x.shape
    ks, _, _, cout = k.shape
    r = ks // 2
    out = np.zeros((H, W, cout))
    for y in range(H):
        for xx in range(W):
            for o in range(cout):
                acc = b[o]
                for i in range(ks):
                    for j in range(ks):
                        yy, xj = y + i - r, xx + j - r
                        if 0 <= yy < H and 0 <= xj < W:
                            for c in range(cin):
                                acc += x[yy, xj, c] * k[i, j, c, o]
                out[y, xx, o] = acc
    return out


def jacobian_frobenius_sq(omega, b, x):
    """Sum over (i, j) of (d tanh(x @ omega + b)_j / d x_i)^2 via a per-input finite-free walk.

    Builds the Jacobian column by column from the analytic tanh derivative of
    each scalar pre-activation, without using the closed-form collapse.
    """
    n_in, n_out = omega.shape
    J = np.zeros((n_out, n_in))
    for j in range(n_out):
        pre = sum(x[i] * omega[i, j] for i in range(n_in)) + b[j]
        for i in range(n_in):
            J[j, i] = (1.0 - np.tanh(pre) ** 2) * omega[i, j]
    return float(np.sum(J * J))


def reduced_network_cases(seed=0, n=4):
    """Loss closures over each of the five mappings at reduced size (16x16 covers, 4x4 watermarks).

    Returns ``{group: (loss_fn, params)}`` in 64-bit precision; callers must
    be inside ``tensor.precision(np.float64)``.
    """
    from wmnet import network as net
    from wmnet import tensor as T
    from wmnet.loss import invariance_penalty, psi

    rng = np.random.default_rng(seed)
    params = net.init_params(n, seed=seed, dtype=np.float64)
    # Nudge biases off zero so no ReLU sits exactly on its kink.
    for k, p in params.items():
        if k.endswith(".b"):
            p.data[...] = rng.uniform(-0.1, 0.1, p.data.shape)
    w = T.tensor(rng.integers(0, 2, (4, 4, 1)).astype(np.float64))
    c = T.tensor(rng.uniform(0, 1, (16, 16, 3)))
    wf_in = T.tensor(rng.uniform(-1, 1, (16, 16, 3)))
    t_in = T.tensor(rng.uniform(-1, 1, (16, 16, n)))
    probes = {k: rng.standard_normal(s) for k, s in
              [("mu", (16, 16, 3)), ("sigma", (16, 16, 3)), ("tau", (16, 16, n)),
               ("phi", (16, 16, 3)), ("gamma", (4, 4, 1))]}

    def mu_loss():
        return (net.mu_forward(w, params) * probes["mu"]).sum()

    def sigma_loss():
        m, feats = net.sigma_forward(wf_in, c, params)
        return (m * probes["sigma"]).sum() + psi(feats)

    def tau_loss():
        t = net.tau_forward(c, params)
        return (t * probes["tau"]).sum() + invariance_penalty(params["tau.w"], t)

    def phi_loss():
        return (net.phi_forward(t_in, params) * probes["phi"]).sum()

    def gamma_loss():
        return (net.gamma_forward(wf_in, params) * probes["gamma"]).sum()

    fns = {"theta1": mu_loss, "theta2": sigma_loss, "theta5": tau_loss,
           "theta3": phi_loss, "theta4": gamma_loss}
    return {g: (fn, net.group_params(params, g)) for g, fn in fns.items()}


def natural_image(size=128):
    """The astronaut photograph from scikit-image, resampled and 8-bit quantized."""
    from skimage import data
    from wmnet.imageio import resize_bilinear

    img = resize_bilinear(data.astronaut() / 255.0, size, size)
    return np.rint(img * 255.0) / 255.0


def libjpeg_round_trip(img, quality):
    """Encode/decode through Pillow's libjpeg with 4:4:4 sampling."""
    import io
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.rint(img * 255).astype(np.uint8)).save(buf, "JPEG", quality=quality, subsampling=0)
    return np.asarray(Image.open(buf), dtype=np.float64) / 255.0


def clmul_mod(a, b, prim=0x11D):
    """Carry-less multiply then reduce modulo ``prim``: GF(2^8) product from first principles."""
    p = 0
    for i in range(8):
        if b >> i & 1:
            p ^= a << i
    for bit in range(15, 7, -1):
        if p >> bit & 1:
            p ^= prim << (bit - 8)
    return p


def native_crop(name, size=256):
    """Top-left ``size`` square of a scikit-image sample photo at native resolution, as RGB."""
    from skimage import data

    img = getattr(data, name)() / 255.0
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[:size, :size]
