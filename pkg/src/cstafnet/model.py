"""End-to-end model: reshape -> parallel multi-scale convolutions ->
batch norm -> dropout -> BiGRU -> temporal attention -> channel attention
-> global max pool -> dense(relu) -> dropout -> sigmoid/softmax head.

Also owns parameter initialization and the self-describing checkpoint
format (magic CSTAFNET).
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import CheckpointError, ConfigError, ShapeError
from .layers import (BatchNormParams, ChannelAttentionParams, ConvParams,
                     DenseParams, GruParams, TemporalAttentionParams)
from .numerics import RngState, glorot_init

CHECKPOINT_MAGIC = b"CSTAFNET"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int = 60
    kernel_sizes: tuple = (3, 5, 7)
    filters: int = 64
    gru_units: int = 64
    attn_ratio: int = 8
    dropout1: float = 0.3
    dropout2: float = 0.4
    hidden_units: int = 128
    head: str = "multiclass"
    n_classes: int = 15
    init_seed: int = 0
    t_attn_bias: bool = True  # train the temporal-attention bias term

    def validate(self):
        if self.head not in ("binary", "multiclass"):
            raise ConfigError(f"head must be binary or multiclass, got {self.head!r}")
        if self.head == "multiclass" and self.n_classes < 2:
            raise ConfigError(f"multiclass head needs n_classes >= 2, got {self.n_classes}")
        if not self.kernel_sizes:
            raise ConfigError("at least one kernel size is required")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and positive, got {k}")
        if self.input_dim < max(self.kernel_sizes):
            raise ConfigError(
                f"input_dim {self.input_dim} is smaller than the largest kernel "
                f"{max(self.kernel_sizes)}")
        if min(self.filters, self.gru_units, self.hidden_units, self.attn_ratio) < 1:
            raise ConfigError("filters, gru_units, hidden_units and attn_ratio must be >= 1")
        if (2 * self.gru_units) % self.attn_ratio != 0:
            raise ConfigError(
                f"channel attention ratio {self.attn_ratio} must divide the BiGRU "
                f"output width {2 * self.gru_units}")
        for rate in (self.dropout1, self.dropout2):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rates must be in [0, 1), got {rate}")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "kernel_sizes": list(self.kernel_sizes),
            "filters": self.filters,
            "gru_units": self.gru_units,
            "attn_ratio": self.attn_ratio,
            "dropout1": self.dropout1,
            "dropout2": self.dropout2,
            "hidden_units": self.hidden_units,
            "head": self.head,
            "n_classes": self.n_classes,
            "init_seed": self.init_seed,
            "t_attn_bias": self.t_attn_bias,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel_sizes"] = tuple(d["kernel_sizes"])
        return cls(**d)


@dataclass
class ModelParams:
    convs: list  # one ConvParams per kernel size, in config order
    bn: BatchNormParams
    gru_fwd: GruParams
    gru_bwd: GruParams
    t_attn: TemporalAttentionParams
    c_attn: ChannelAttentionParams
    hidden: DenseParams
    out: DenseParams
    kernel_sizes: tuple = field(default_factory=tuple)


_GRU_FIELDS = ("u_z", "r_z", "b_z", "u_r", "r_r", "b_r", "u_h", "r_h", "b_h")


def _init_gru(c_in, units, rng):
    arrays = {}
    for gate in ("z", "r", "h"):
        arrays[f"u_{gate}"] = glorot_init(c_in, units, rng)
        arrays[f"r_{gate}"] = glorot_init(units, units, rng)
        arrays[f"b_{gate}"] = np.zeros(units)
    return GruParams(**{name: arrays[name] for name in _GRU_FIELDS})


def build_model(cfg):
    """Allocate all parameters, deterministically per cfg.init_seed."""
    cfg.validate()
    rng = RngState(cfg.init_seed)
    convs = []
    for k in cfg.kernel_sizes:
        w = glorot_init(k, cfg.filters, rng).reshape(k, 1, cfg.filters)
        convs.append(ConvParams(w=w, b=np.zeros(cfg.filters)))
    concat = len(cfg.kernel_sizes) * cfg.filters
    bn = BatchNormParams(
        gamma=np.ones(concat), beta=np.zeros(concat),
        running_mean=np.zeros(concat), running_var=np.ones(concat))
    gru_fwd = _init_gru(concat, cfg.gru_units, rng)
    gru_bwd = _init_gru(concat, cfg.gru_units, rng)
    t_attn = TemporalAttentionParams(
        w=glorot_init(cfg.input_dim, cfg.input_dim, rng), b=np.zeros(cfg.input_dim))
    width = 2 * cfg.gru_units
    bottleneck = width // cfg.attn_ratio
    c_attn = ChannelAttentionParams(
        w1=glorot_init(width, bottleneck, rng), b1=np.zeros(bottleneck),
        w2=glorot_init(bottleneck, width, rng), b2=np.zeros(width))
    hidden = DenseParams(w=glorot_init(width, cfg.hidden_units, rng),
                         b=np.zeros(cfg.hidden_units))
    out_units = 1 if cfg.head == "binary" else cfg.n_classes
    out = DenseParams(w=glorot_init(cfg.hidden_units, out_units, rng),
                      b=np.zeros(out_units))
    return ModelParams(convs=convs, bn=bn, gru_fwd=gru_fwd, gru_bwd=gru_bwd,
                       t_attn=t_attn, c_attn=c_attn, hidden=hidden, out=out,
                       kernel_sizes=tuple(cfg.kernel_sizes))


def named_arrays(params, trainable_only=False):
    """(name, array) pairs in the fixed serialization order."""
    pairs = []
    for k, conv in zip(params.kernel_sizes, params.convs):
        pairs.append((f"conv{k}.w", conv.w))
        pairs.append((f"conv{k}.b", conv.b))
    pairs.append(("bn.gamma", params.bn.gamma))
    pairs.append(("bn.beta", params.bn.beta))
    if not trainable_only:
        pairs.append(("bn.running_mean", params.bn.running_mean))
        pairs.append(("bn.running_var", params.bn.running_var))
    for prefix, gru in (("gru_fwd", params.gru_fwd), ("gru_bwd", params.gru_bwd)):
        for name in _GRU_FIELDS:
            pairs.append((f"{prefix}.{name}", getattr(gru, name)))
    pairs.append(("t_attn.w", params.t_attn.w))
    pairs.append(("t_attn.b", params.t_attn.b))
    for name in ("w1", "b1", "w2", "b2"):
        pairs.append((f"c_attn.{name}", getattr(params.c_attn, name)))
    pairs.append(("hidden.w", params.hidden.w))
    pairs.append(("hidden.b", params.hidden.b))
    pairs.append(("out.w", params.out.w))
    pairs.append(("out.b", params.out.b))
    return pairs


def set_named_array(params, name, value):
    obj_name, attr = name.split(".")
    if obj_name.startswith("conv"):
        k = int(obj_name[4:])
        conv = params.convs[params.kernel_sizes.index(k)]
        setattr(conv, attr, value)
    else:
        setattr(getattr(params, obj_name), attr, value)


def num_params(params):
    """Trainable value count (running statistics excluded)."""
    return sum(a.size for _, a in named_arrays(params, trainable_only=True))


def clone_params(params):
    return ModelParams(
        convs=[ConvParams(w=c.w.copy(), b=c.b.copy()) for c in params.convs],
        bn=BatchNormParams(
            gamma=params.bn.gamma.copy(), beta=params.bn.beta.copy(),
            running_mean=params.bn.running_mean.copy(),
            running_var=params.bn.running_var.copy(),
            eps=params.bn.eps, momentum=params.bn.momentum),
        gru_fwd=GruParams(**{n: getattr(params.gru_fwd, n).copy() for n in _GRU_FIELDS}),
        gru_bwd=GruParams(**{n: getattr(params.gru_bwd, n).copy() for n in _GRU_FIELDS}),
        t_attn=TemporalAttentionParams(w=params.t_attn.w.copy(), b=params.t_attn.b.copy()),
        c_attn=ChannelAttentionParams(
            w1=params.c_attn.w1.copy(), b1=params.c_attn.b1.copy(),
            w2=params.c_attn.w2.copy(), b2=params.c_attn.b2.copy()),
        hidden=DenseParams(w=params.hidden.w.copy(), b=params.hidden.b.copy()),
        out=DenseParams(w=params.out.w.copy(), b=params.out.b.copy()),
        kernel_sizes=params.kernel_sizes)


def forward_tape(params, cfg, batch, mode, rng=None, dropout_masks=None,
                 update_stats=True):
    """Full forward pass keeping every layer cache for backward().

    dropout_masks ({"drop1": ..., "drop2": ...}) freezes the dropout
    layers; otherwise train mode draws masks from rng.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != cfg.input_dim:
        raise ShapeError(
            f"batch of shape {batch.shape} does not match input width {cfg.input_dim}")
    if mode == "train" and rng is None and dropout_masks is None \
            and (cfg.dropout1 > 0 or cfg.dropout2 > 0):
        raise ConfigError("train-mode forward needs an rng (or frozen dropout masks)")
    masks = dropout_masks or {}
    x = batch[:, :, None]
    h, c_ms = layers.multi_scale_block_fwd(x, params.convs)
    h, c_bn = layers.batch_norm_fwd(h, params.bn, mode, update_stats=update_stats)
    h, c_d1 = layers.dropout_fwd(h, cfg.dropout1, mode, rng, mask=masks.get("drop1"))
    h, c_gru = layers.bigru_fwd(h, params.gru_fwd, params.gru_bwd)
    h, c_ta = layers.temporal_attention_fwd(h, params.t_attn)
    h, c_ca = layers.channel_attention_fwd(h, params.c_attn)
    h, c_pool = layers.global_max_pool_fwd(h)
    h, c_hid = layers.dense_fwd(h, params.hidden, act="relu")
    h, c_d2 = layers.dropout_fwd(h, cfg.dropout2, mode, rng, mask=masks.get("drop2"))
    act = "sigmoid" if cfg.head == "binary" else "softmax"
    out, c_out = layers.dense_fwd(h, params.out, act=act)
    tape = (params, c_ms, c_bn, c_d1, c_gru, c_ta, c_ca, c_pool, c_hid, c_d2, c_out)
    return out, tape


def forward(params, cfg, batch, mode, rng=None):
    out, _ = forward_tape(params, cfg, batch, mode, rng)
    return out


def backward(gout, tape):
    """Gradient of the loss w.r.t. every trainable array, as a dict keyed
    like named_arrays()."""
    params, c_ms, c_bn, c_d1, c_gru, c_ta, c_ca, c_pool, c_hid, c_d2, c_out = tape
    grads = {}
    g, g_out = layers.dense_bwd(gout, c_out)
    grads["out.w"], grads["out.b"] = g_out["w"], g_out["b"]
    g = layers.dropout_bwd(g, c_d2)
    g, g_hid = layers.dense_bwd(g, c_hid)
    grads["hidden.w"], grads["hidden.b"] = g_hid["w"], g_hid["b"]
    g = layers.global_max_pool_bwd(g, c_pool)
    g, g_ca = layers.channel_attention_bwd(g, c_ca)
    for name in ("w1", "b1", "w2", "b2"):
        grads[f"c_attn.{name}"] = g_ca[name]
    g, g_ta = layers.temporal_attention_bwd(g, c_ta)
    grads["t_attn.w"], grads["t_attn.b"] = g_ta["w"], g_ta["b"]
    g, (g_gf, g_gb) = layers.bigru_bwd(g, c_gru)
    for name in _GRU_FIELDS:
        grads[f"gru_fwd.{name}"] = g_gf[name]
        grads[f"gru_bwd.{name}"] = g_gb[name]
    g = layers.dropout_bwd(g, c_d1)
    g, g_bn = layers.batch_norm_bwd(g, c_bn)
    grads["bn.gamma"], grads["bn.beta"] = g_bn["gamma"], g_bn["beta"]
    g, g_convs = layers.multi_scale_block_bwd(g, c_ms)
    for k, gc in zip(params.kernel_sizes, g_convs):
        grads[f"conv{k}.w"], grads[f"conv{k}.b"] = gc["w"], gc["b"]
    return grads


# ---------------------------------------------------------------------------
# checkpoint io

def save_checkpoint(params, cfg, path, extra_meta=None):
    """Write a self-describing checkpoint; the round trip is bit-exact.

    Layout: magic, version byte, length-prefixed JSON block (config plus
    optional metadata), shape-prefixed float64 little-endian arrays in
    named_arrays order, then an 8-byte digest of everything after the magic.
    """
    header = {"config": cfg.to_dict()}
    if extra_meta:
        header["meta"] = extra_meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += struct.pack("<B", CHECKPOINT_VERSION)
    payload += struct.pack("<Q", len(blob))
    payload += blob
    for _, arr in named_arrays(params):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload += arr.tobytes()
    digest = hashlib.blake2b(bytes(payload), digest_size=8).digest()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(payload)
        fh.write(digest)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise CheckpointError(
                f"checkpoint truncated at byte {len(self.data)} while reading "
                f"{what} (needed {n} bytes at offset {self.off})")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, cfg, meta)."""
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data)
    if rd.take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0; not a checkpoint file")
    payload_start = rd.off
    version = rd.take(1, "version")[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} at byte {payload_start}")
    if len(data) < payload_start + 9:
        raise CheckpointError(f"{path}: truncated header at byte {len(data)}")
    stored_digest = data[-8:]
    body = data[payload_start:-8]
    digest = hashlib.blake2b(body, digest_size=8).digest()
    if digest != stored_digest:
        raise CheckpointError(
            f"{path}: checksum mismatch over bytes {payload_start}..{len(data) - 8}")
    (blob_len,) = struct.unpack("<Q", rd.take(8, "header length"))
    try:
        header = json.loads(rd.take(blob_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header block at byte {rd.off}: {exc}") from None
    cfg = ModelConfig.from_dict(header["config"])
    params = build_model(cfg)
    for name, expected in named_arrays(params):
        start = rd.off
        ndim = rd.take(1, f"{name} ndim")[0]
        shape = struct.unpack(f"<{ndim}Q", rd.take(8 * ndim, f"{name} shape"))
        if tuple(shape) != expected.shape:
            raise CheckpointError(
                f"{path}: array {name} has shape {tuple(shape)} at byte {start}, "
                f"expected {expected.shape}")
        count = int(np.prod(shape)) if ndim else 1
        raw = rd.take(8 * count, f"{name} data")
        set_named_array(params, name,
                        np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    if rd.off != len(data) - 8:
        raise CheckpointError(
            f"{path}: {len(data) - 8 - rd.off} unexpected trailing bytes at byte {rd.off}")
    return params, cfg, header.get("meta")
