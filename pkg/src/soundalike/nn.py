"""The trainable audio encoder and its hand-derived backpropagation.

Layout: log-Mel front-end -> per-Mel-bin batch norm -> 1x1 conv projecting
to 3 channels -> stack of (3x3 conv, batch norm, ReLU, 2x2 max-pool)
blocks -> global average pool -> dense -> L2 normalization, so every
embedding sits on the unit hypersphere in R^128.

No autodiff framework: each layer implements forward/backward explicitly,
and the test suite checks every one against central finite differences.
Parameters are stored float32 (the on-disk format); math runs in a
configurable compute dtype.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .dsp import hann_periodic, mel_filterbank
from .errors import CacheMismatch, ModelLoadError, ShapeMismatch

MODEL_MAGIC = b"SSE1"
MODEL_VERSION = 1
EMBED_DIM = 128
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
NORM_FLOOR = 1e-12

DEFAULT_ARCH = {
    "sample_rate": 16000,
    "clip_samples": 160000,
    "fft_size": 2048,
    "hop": 1024,
    "n_mels": 128,
    "f_min": 20.0,
    "rgb_channels": 3,
    "body_channels": [16, 32, 64, 128],
    "kernel": 3,
    "embed_dim": EMBED_DIM,
}


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(y, dy):
    """y is the forward output; the mask y > 0 equals x > 0."""
    return dy * (y > 0)


def _im2col(x, k):
    """(B, H, W, C) -> (B*H*W, C*k*k) patch matrix for a same-padded conv.

    Channels-last keeps the gather cache-friendly: each patch row copies
    k*k contiguous runs of C values.
    """
    b, h, w, c = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return view.reshape(b * h * w, c * k * k)


def _weight_mat(weight):
    """(O, C, k, k) kernel -> (C*k*k, O) matrix matching _im2col's layout."""
    o = weight.shape[0]
    return weight.transpose(1, 2, 3, 0).reshape(-1, o)


def conv2d_forward(x, weight, bias=None, return_cols=False):
    """Same-padded stride-1 2-D convolution as one GEMM over an im2col matrix.

    x: (B, H, W, C); weight: (O, C, k, k) with odd k; bias: (O,) or None.
    """
    b, h, w, c = x.shape
    o, c2, k, _ = weight.shape
    if c != c2:
        raise ShapeMismatch("conv input has %d channels, kernel expects %d" % (c, c2))
    if k == 1:
        cols = x.reshape(b * h * w, c)
    else:
        cols = _im2col(x, k)
    y = cols @ _weight_mat(weight)
    if bias is not None:
        y += bias
    y = y.reshape(b, h, w, o)
    if return_cols:
        return y, cols
    return y


def _col2im(dcols, x_shape, k):
    """Adjoint of _im2col: scatter-add patch gradients back onto the input."""
    b, h, w, c = x_shape
    pad = k // 2
    dxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    d6 = dcols.reshape(b, h, w, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + w, :] += d6[:, :, :, :, i, j]
    if pad:
        return np.ascontiguousarray(dxp[:, pad:-pad, pad:-pad, :])
    return dxp


def conv2d_backward(x, weight, dy, cols=None, x_shape=None):
    """Gradients of conv2d_forward. Returns (dx, dweight, dbias).

    Passing the forward's `cols` skips recomputing the patch matrix (supply
    x_shape in that case; x may be None).
    """
    o, c, k, _ = weight.shape
    if x_shape is None:
        x_shape = x.shape
    if cols is None:
        cols = x.reshape(-1, c) if k == 1 else _im2col(x, k)
    dy_mat = dy.reshape(-1, o)
    dw_mat = cols.T @ dy_mat  # (C*k*k, O)
    dweight = dw_mat.reshape(c, k, k, o).transpose(3, 0, 1, 2)
    dcols = dy_mat @ _weight_mat(weight).T
    if k == 1:
        dx = dcols.reshape(x_shape)
    else:
        dx = _col2im(dcols, x_shape, k)
    dbias = dy.sum(axis=(0, 1, 2))
    return dx, dweight, dbias


def maxpool2_forward(x):
    """2x2 max pool, stride 2, channels-last; odd trailing rows/cols drop."""
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :h2 * 2, :w2 * 2, :]
    tiles = np.stack([xc[:, ::2, ::2], xc[:, ::2, 1::2],
                      xc[:, 1::2, ::2], xc[:, 1::2, 1::2]], axis=-1)
    idx = tiles.argmax(axis=-1)
    y = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(x_shape, idx, dy):
    b, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dtiles = np.zeros((b, h2, w2, c, 4), dtype=dy.dtype)
    np.put_along_axis(dtiles, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :h2 * 2:2, :w2 * 2:2] = dtiles[..., 0]
    dx[:, :h2 * 2:2, 1:w2 * 2:2] = dtiles[..., 1]
    dx[:, 1:h2 * 2:2, :w2 * 2:2] = dtiles[..., 2]
    dx[:, 1:h2 * 2:2, 1:w2 * 2:2] = dtiles[..., 3]
    return dx


def dense_forward(x, weight, bias):
    """x: (B, n_in); weight: (n_out, n_in)."""
    return x @ weight.T + bias


def dense_backward(x, weight, dy):
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


def l2norm_forward(z):
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), NORM_FLOOR)
    return z / norms, norms


def l2norm_backward(y, norms, dy):
    """Tangent-space projection: (dy - y (y . dy)) / ||z||."""
    dot = np.sum(y * dy, axis=1, keepdims=True)
    return (dy - y * dot) / norms


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      train, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Normalize over every leading axis, scale/shift per trailing feature.

    x is channels-last (..., F); gamma/beta are (F,). In train mode the
    (biased) batch statistics are used and the running buffers are updated
    in place; inference mode uses the buffers. Returns (y, cache); cache
    is None in inference mode.
    """
    f = x.shape[-1]
    x2 = x.reshape(-1, f)
    if train:
        mean = x2.mean(axis=0)
        xhat = x2 - mean
        var = np.einsum("nf,nf->f", xhat, xhat, optimize=True) / x2.shape[0]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat *= inv_std
        y = xhat * gamma
        y += beta
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= (1.0 - momentum)
        running_var += momentum * var.astype(running_var.dtype)
        return y.reshape(x.shape), (xhat, inv_std)
    rm = running_mean.astype(x.dtype)
    rv = running_var.astype(x.dtype)
    y = (x2 - rm) * (1.0 / np.sqrt(rv + eps)) * gamma + beta
    return y.reshape(x.shape), None


def batchnorm_backward(cache, gamma, dy):
    """Gradients for train-mode batch norm. Returns (dx, dgamma, dbeta)."""
    xhat, inv_std = cache  # xhat is the 2-D (N, F) normalized input
    f = xhat.shape[-1]
    dy2 = dy.reshape(-1, f)
    n = dy2.shape[0]
    dgamma = np.einsum("nf,nf->f", dy2, xhat, optimize=True)
    dbeta = dy2.sum(axis=0)
    a = gamma * inv_std
    dx = dy2 * a
    dx -= xhat * ((a / n) * dgamma)
    dx -= (a / n) * dbeta
    return dx.reshape(dy.shape), dgamma, dbeta


# ---------------------------------------------------------------------------
# the encoder
# ---------------------------------------------------------------------------

class EncoderModel:
    """Encoder parameters plus the front-end configuration that produced them.

    Parameters live in `params` (trainable) and `buffers` (batch-norm
    running statistics), all float32, keyed by dotted names in declaration
    order. `version` increments on every optimizer update so stale
    backward caches can be detected.
    """

    def __init__(self, arch=None, seed=0, compute_dtype=np.float32):
        self.arch = dict(DEFAULT_ARCH if arch is None else arch)
        self.compute_dtype = compute_dtype
        self.version = 0
        self.params = {}
        self.buffers = {}
        self._fb = mel_filterbank(
            self.arch["n_mels"], self.arch["fft_size"],
            self.arch["sample_rate"], self.arch["f_min"],
        ).weights
        self._window = hann_periodic(self.arch["fft_size"])
        self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng):
        a = self.arch
        k = a["kernel"]
        n_mels = a["n_mels"]

        def f32(x):
            return np.asarray(x, dtype=np.float32)

        self.params["input_bn.gamma"] = f32(np.ones(n_mels))
        self.params["input_bn.beta"] = f32(np.zeros(n_mels))
        self.buffers["input_bn.running_mean"] = f32(np.zeros(n_mels))
        self.buffers["input_bn.running_var"] = f32(np.ones(n_mels))

        rgb = a["rgb_channels"]
        self.params["rgb.weight"] = f32(rng.normal(0, np.sqrt(2.0), (rgb, 1, 1, 1)))
        self.params["rgb.bias"] = f32(np.zeros(rgb))

        c_in = rgb
        for b, c_out in enumerate(a["body_channels"]):
            std = np.sqrt(2.0 / (c_in * k * k))
            self.params["block%d.conv.weight" % b] = f32(
                rng.normal(0, std, (c_out, c_in, k, k)))
            self.params["block%d.bn.gamma" % b] = f32(np.ones(c_out))
            self.params["block%d.bn.beta" % b] = f32(np.zeros(c_out))
            self.buffers["block%d.bn.running_mean" % b] = f32(np.zeros(c_out))
            self.buffers["block%d.bn.running_var" % b] = f32(np.ones(c_out))
            c_in = c_out

        d = a["embed_dim"]
        self.params["head.weight"] = f32(rng.normal(0, np.sqrt(1.0 / c_in), (d, c_in)))
        self.params["head.bias"] = f32(np.zeros(d))

    # -- front-end ----------------------------------------------------------

    def frontend(self, waves: np.ndarray) -> np.ndarray:
        """Batch of raw clips (B, clip_samples) -> log-Mel (B, T, n_mels)."""
        a = self.arch
        fft, hop = a["fft_size"], a["hop"]
        dt = self.compute_dtype
        x = np.ascontiguousarray(waves, dtype=dt)
        b, n = x.shape
        n_frames = (n - fft) // hop + 1
        frames = np.lib.stride_tricks.sliding_window_view(x, fft, axis=1)[:, ::hop][:, :n_frames]
        spec = np.abs(scipy.fft.rfft(frames * self._window.astype(dt), axis=2, workers=2))
        mel = spec @ self._fb.T.astype(dt)
        return np.log(mel + 1e-6)

    # -- forward / backward ---------------------------------------------------

    def forward(self, waves: np.ndarray, train: bool):
        """Returns (embeddings (B, embed_dim), cache or None)."""
        a = self.arch
        waves = np.asarray(waves)
        if waves.ndim != 2 or waves.shape[1] != a["clip_samples"]:
            raise ShapeMismatch(
                "expected (B, %d) waveforms, got %r" % (a["clip_samples"], waves.shape))
        dt = self.compute_dtype
        p = {k: v.astype(dt) for k, v in self.params.items()}

        feats = self.frontend(waves)  # (B, T, M)
        x_bn, bn_cache = batchnorm_forward(
            feats, p["input_bn.gamma"], p["input_bn.beta"],
            self.buffers["input_bn.running_mean"], self.buffers["input_bn.running_var"],
            train=train)
        # image layout: (B, n_mels, n_frames, 1), channels last
        img = np.ascontiguousarray(x_bn.transpose(0, 2, 1))[:, :, :, None]
        rgb = conv2d_forward(img, p["rgb.weight"], p["rgb.bias"])

        cache = {"version": self.version, "feats_bn": bn_cache, "img": img,
                 "blocks": [], "standardized": x_bn if train else None}
        x = rgb
        for bidx in range(len(a["body_channels"])):
            w = p["block%d.conv.weight" % bidx]
            conv, cols = conv2d_forward(x, w, return_cols=True)
            bn, c_bn = batchnorm_forward(
                conv, p["block%d.bn.gamma" % bidx], p["block%d.bn.beta" % bidx],
                self.buffers["block%d.bn.running_mean" % bidx],
                self.buffers["block%d.bn.running_var" % bidx],
                train=train)
            act = np.maximum(bn, 0.0, out=bn)
            pooled, idx = maxpool2_forward(act)
            if train:
                cache["blocks"].append({"x_shape": x.shape, "cols": cols, "bn": c_bn,
                                        "act": act, "idx": idx})
            x = pooled

        gap = x.mean(axis=(1, 2))  # (B, C)
        z = dense_forward(gap, p["head.weight"], p["head.bias"])
        emb, norms = l2norm_forward(z)

        if not train:
            return emb, None
        cache.update({"body_out_shape": x.shape, "gap": gap, "emb": emb,
                      "norms": norms, "params": p})
        return emb, cache

    def backward(self, cache, upstream: np.ndarray) -> dict:
        """Gradients of sum(upstream * embeddings) w.r.t. every parameter."""
        if cache is None or cache.get("version") != self.version:
            raise CacheMismatch("forward cache does not match current model version")
        a = self.arch
        p = cache["params"]
        grads = {}

        dz = l2norm_backward(cache["emb"], cache["norms"],
                             upstream.astype(self.compute_dtype))
        dgap, grads["head.weight"], grads["head.bias"] = dense_backward(
            cache["gap"], p["head.weight"], dz)

        bsh = cache["body_out_shape"]
        dx = np.broadcast_to(
            (dgap / (bsh[1] * bsh[2]))[:, None, None, :], bsh).astype(dz.dtype)

        for bidx in reversed(range(len(a["body_channels"]))):
            blk = cache["blocks"][bidx]
            dact = maxpool2_backward(blk["act"].shape, blk["idx"], dx)
            dbn = relu_backward(blk["act"], dact)
            dconv, dgamma, dbeta = batchnorm_backward(
                blk["bn"], p["block%d.bn.gamma" % bidx], dbn)
            grads["block%d.bn.gamma" % bidx] = dgamma.reshape(-1)
            grads["block%d.bn.beta" % bidx] = dbeta.reshape(-1)
            dx, grads["block%d.conv.weight" % bidx], _ = conv2d_backward(
                None, p["block%d.conv.weight" % bidx], dconv,
                cols=blk["cols"], x_shape=blk["x_shape"])

        dimg, grads["rgb.weight"], grads["rgb.bias"] = conv2d_backward(
            cache["img"], p["rgb.weight"], dx)
        dxbn = np.ascontiguousarray(dimg[:, :, :, 0].transpose(0, 2, 1))
        _, dgamma, dbeta = batchnorm_backward(
            cache["feats_bn"], p["input_bn.gamma"], dxbn)
        grads["input_bn.gamma"] = dgamma.reshape(-1)
        grads["input_bn.beta"] = dbeta.reshape(-1)
        return grads

    def copy(self) -> "EncoderModel":
        dup = EncoderModel.__new__(EncoderModel)
        dup.arch = dict(self.arch)
        dup.compute_dtype = self.compute_dtype
        dup.version = self.version
        dup.params = {k: v.copy() for k, v in self.params.items()}
        dup.buffers = {k: v.copy() for k, v in self.buffers.items()}
        dup._fb = self._fb
        dup._window = self._window
        return dup


def encode_forward(model: EncoderModel, waves: np.ndarray, mode: str = "inference"):
    """Embed a batch of clips. mode 'train' returns (embeddings, cache)."""
    if mode not in ("train", "inference"):
        raise ValueError("mode must be 'train' or 'inference'")
    return model.forward(waves, train=(mode == "train"))


def encode_backward(model: EncoderModel, cache, upstream: np.ndarray) -> dict:
    return model.backward(cache, upstream)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Standard bias-corrected Adam update, applied in place.

    Moments are kept in float64; the update is computed in float64 and cast
    back to each parameter's dtype.
    """
    for name, p in params.items():
        if name not in grads:
            continue
        if grads[name].shape != p.shape:
            raise ShapeMismatch("gradient shape %r != param shape %r for %s"
                                % (grads[name].shape, p.shape, name))
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if name not in grads:
            continue
        g = grads[name].astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1 ** state.t)
        vhat = v / (1.0 - b2 ** state.t)
        new = p.astype(np.float64) - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        params[name] = new.astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _write_tensor(f, arr: np.ndarray):
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(f) -> np.ndarray:
    head = f.read(4)
    if len(head) < 4:
        raise ModelLoadError("truncated tensor header")
    (ndim,) = struct.unpack("<I", head)
    if ndim > 8:
        raise ModelLoadError("implausible tensor rank %d" % ndim)
    shape = []
    for _ in range(ndim):
        raw = f.read(4)
        if len(raw) < 4:
            raise ModelLoadError("truncated tensor shape")
        shape.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(shape)) if shape else 1
    data = f.read(4 * count)
    if len(data) < 4 * count:
        raise ModelLoadError("truncated tensor data")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def save_model(model: EncoderModel, path) -> None:
    desc = dict(model.arch)
    desc["param_names"] = list(model.params.keys())
    desc["buffer_names"] = list(model.buffers.keys())
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in desc["param_names"]:
            _write_tensor(f, model.params[name])
        for name in desc["buffer_names"]:
            _write_tensor(f, model.buffers[name])


def load_model(path) -> EncoderModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ModelLoadError("bad magic %r in %s" % (magic, path))
        raw = f.read(4)
        if len(raw) < 4:
            raise ModelLoadError("truncated header")
        (version,) = struct.unpack("<I", raw)
        if version != MODEL_VERSION:
            raise ModelLoadError("unsupported model format version %d" % version)
        raw = f.read(4)
        if len(raw) < 4:
            raise ModelLoadError("truncated descriptor length")
        (desc_len,) = struct.unpack("<I", raw)
        blob = f.read(desc_len)
        if len(blob) < desc_len:
            raise ModelLoadError("truncated descriptor")
        try:
            desc = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelLoadError("unreadable architecture descriptor: %s" % exc)

        arch = {k: desc[k] for k in DEFAULT_ARCH if k in desc}
        missing = set(DEFAULT_ARCH) - set(arch)
        if missing:
            raise ModelLoadError("descriptor missing keys: %s" % sorted(missing))
        model = EncoderModel(arch=arch, seed=0)
        for name in desc["param_names"]:
            if name not in model.params:
                raise ModelLoadError("unknown parameter %r" % name)
            tensor = _read_tensor(f)
            if tensor.shape != model.params[name].shape:
                raise ModelLoadError("shape mismatch for %s" % name)
            model.params[name] = tensor
        for name in desc["buffer_names"]:
            if name not in model.buffers:
                raise ModelLoadError("unknown buffer %r" % name)
            tensor = _read_tensor(f)
            if tensor.shape != model.buffers[name].shape:
                raise ModelLoadError("shape mismatch for %s" % name)
            model.buffers[name] = tensor
    return model


def save_adam_state(state: AdamState, path) -> None:
    """Optimizer-state sidecar for resumable checkpoints."""
    names = sorted(state.m.keys())
    with open(path, "wb") as f:
        f.write(b"SSA1")
        f.write(struct.pack("<IdddQ", len(names), state.lr, state.beta1,
                            state.beta2, state.t))
        f.write(struct.pack("<d", state.eps))
        for name in names:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            for arr in (state.m[name], state.v[name]):
                f.write(struct.pack("<I", arr.ndim))
                for d in arr.shape:
                    f.write(struct.pack("<I", d))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_adam_state(path) -> AdamState:
    with open(path, "rb") as f:
        if f.read(4) != b"SSA1":
            raise ModelLoadError("bad optimizer sidecar magic")
        n, lr, b1, b2, t = struct.unpack("<IdddQ", f.read(36))
        (eps,) = struct.unpack("<d", f.read(8))
        state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t)
        for _ in range(n):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            arrs = []
            for _ in range(2):
                (ndim,) = struct.unpack("<I", f.read(4))
                shape = [struct.unpack("<I", f.read(4))[0] for _ in range(ndim)]
                count = int(np.prod(shape)) if shape else 1
                arrs.append(np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy())
            state.m[name], state.v[name] = arrs
    return state
