"""Runtime verification suites: finite-difference gradient checks for
every layer and the composed model, normalization invariants, the metric
brute-force oracle, and closed-form loss/optimizer values.

Each check_* function returns a list of (label, max_relative_error) or
(label, ok, detail) entries; run_all() aggregates them into per-suite
pass/fail lines. `inject_gradient_error` perturbs one analytic gradient
on purpose so the failure path can be exercised end to end.
"""

import time
from dataclasses import replace

import numpy as np

from . import evaluation, layers, model, training
from .layers import (BatchNormParams, ChannelAttentionParams, ConvParams,
                     DenseParams, GruParams, TemporalAttentionParams)
from .numerics import RngState, finite_diff_grad, relative_error, softmax

GRAD_TOL = 1e-4
SUM_TOL = 1e-12


def _weights(rng, shape):
    return rng.uniform(-1.0, 1.0, shape)


def _fd_wrt(loss_of, arr):
    return finite_diff_grad(loss_of, arr)


# ---------------------------------------------------------------------------
# per-layer gradient checks over random small shapes (B <= 3, T <= 6,
# C <= 5). The scalar loss is a fixed random-weighted sum; a plain sum
# would make the batch-norm input gradient identically zero, which checks
# nothing.

def _dim(rng, lo, hi):
    return lo + int(rng.random() * (hi - lo + 1))


def check_conv_gradients(seed=11, draws=3):
    rng = RngState(seed)
    entries = []
    for draw in range(draws):
        act = ("linear", "relu")[draw % 2]
        b, t, c_in, f = _dim(rng, 1, 3), _dim(rng, 3, 6), _dim(rng, 1, 4), _dim(rng, 1, 4)
        k = (3, 5)[draw % 2]
        x = rng.uniform(-1, 1, (b, t, c_in))
        p = ConvParams(w=rng.uniform(-1, 1, (k, c_in, f)), b=rng.uniform(-1, 1, (f,)))
        wts = _weights(rng, (b, t, f))
        _, cache = layers.conv1d_same_fwd(x, p, act)
        gx, grads = layers.conv1d_same_bwd(wts, cache)
        tag = f"conv1d[{act}]#{draw}"
        entries.append((f"{tag}/x", gx, _fd_wrt(
            lambda v: np.sum(layers.conv1d_same_fwd(v, p, act)[0] * wts), x)))
        entries.append((f"{tag}/w", grads["w"], _fd_wrt(
            lambda v: np.sum(layers.conv1d_same_fwd(x, replace(p, w=v), act)[0] * wts), p.w)))
        entries.append((f"{tag}/b", grads["b"], _fd_wrt(
            lambda v: np.sum(layers.conv1d_same_fwd(x, replace(p, b=v), act)[0] * wts), p.b)))
    return entries


def check_multi_scale_gradients(seed=12, draws=2):
    rng = RngState(seed)
    entries = []
    for draw in range(draws):
        b, t, f = _dim(rng, 1, 3), _dim(rng, 5, 6), _dim(rng, 2, 3)
        x = rng.uniform(-1, 1, (b, t, 1))
        convs = [ConvParams(w=rng.uniform(-1, 1, (k, 1, f)), b=rng.uniform(-1, 1, (f,)))
                 for k in (3, 5)]
        wts = _weights(rng, (b, t, 2 * f))
        _, cache = layers.multi_scale_block_fwd(x, convs)
        gx, grads = layers.multi_scale_block_bwd(wts, cache)
        entries.append((f"multi_scale#{draw}/x", gx, _fd_wrt(
            lambda v: np.sum(layers.multi_scale_block_fwd(v, convs)[0] * wts), x)))
        for i, (p, g) in enumerate(zip(convs, grads)):
            def loss_w(v, i=i):
                alt = convs[:i] + [replace(convs[i], w=v)] + convs[i + 1:]
                return np.sum(layers.multi_scale_block_fwd(x, alt)[0] * wts)
            entries.append((f"multi_scale#{draw}/conv{i}.w", g["w"],
                            _fd_wrt(loss_w, p.w)))
    return entries


def _bn_params(rng, c):
    return BatchNormParams(
        gamma=rng.uniform(0.5, 1.5, (c,)), beta=rng.uniform(-0.5, 0.5, (c,)),
        running_mean=rng.uniform(-0.5, 0.5, (c,)), running_var=rng.uniform(0.5, 1.5, (c,)))


def check_batch_norm_gradients(seed=13, draws=2):
    rng = RngState(seed)
    entries = []
    for mode, draw in [(m, d) for d in range(draws) for m in ("train", "infer")]:
        c = _dim(rng, 1, 4)
        x = rng.uniform(-2, 2, (_dim(rng, 2, 3), _dim(rng, 2, 6), c))
        p = _bn_params(rng, c)
        wts = _weights(rng, x.shape)

        def loss(xv=None, gv=None, bv=None):
            q = replace(p, gamma=p.gamma if gv is None else gv,
                        beta=p.beta if bv is None else bv)
            y, _ = layers.batch_norm_fwd(x if xv is None else xv, q, mode,
                                         update_stats=False)
            return np.sum(y * wts)

        _, cache = layers.batch_norm_fwd(x, p, mode, update_stats=False)
        gx, grads = layers.batch_norm_bwd(wts, cache)
        entries.append((f"batch_norm[{mode}]/x", gx, _fd_wrt(lambda v: loss(xv=v), x)))
        entries.append((f"batch_norm[{mode}]/gamma", grads["gamma"],
                        _fd_wrt(lambda v: loss(gv=v), p.gamma)))
        entries.append((f"batch_norm[{mode}]/beta", grads["beta"],
                        _fd_wrt(lambda v: loss(bv=v), p.beta)))
    return entries


def check_dropout_gradients(seed=14, draws=2):
    rng = RngState(seed)
    entries = []
    for draw in range(draws):
        rate = (0.4, 0.3)[draw % 2]
        x = rng.uniform(-1, 1, (_dim(rng, 1, 3), _dim(rng, 2, 6), _dim(rng, 1, 5)))
        mask = rng.random(x.shape) >= rate
        wts = _weights(rng, x.shape)
        _, cache = layers.dropout_fwd(x, rate, "train", mask=mask)
        gx = layers.dropout_bwd(wts, cache)
        fd = _fd_wrt(lambda v: np.sum(
            layers.dropout_fwd(v, rate, "train", mask=mask)[0] * wts), x)
        entries.append((f"dropout[frozen mask]#{draw}/x", gx, fd))
    return entries


def _gru_params(rng, c_in, units):
    fields = {}
    for gate in ("z", "r", "h"):
        fields[f"u_{gate}"] = rng.uniform(-0.7, 0.7, (c_in, units))
        fields[f"r_{gate}"] = rng.uniform(-0.7, 0.7, (units, units))
        fields[f"b_{gate}"] = rng.uniform(-0.3, 0.3, (units,))
    return GruParams(**fields)


def check_bigru_gradients(seed=15):
    rng = RngState(seed)
    x = rng.uniform(-1, 1, (2, 4, 3))
    fwd = _gru_params(rng, 3, 3)
    bwd = _gru_params(rng, 3, 3)
    wts = _weights(rng, (2, 4, 6))
    _, cache = layers.bigru_fwd(x, fwd, bwd)
    gx, (g_f, g_b) = layers.bigru_bwd(wts, cache)
    entries = [("bigru/x", gx, _fd_wrt(
        lambda v: np.sum(layers.bigru_fwd(v, fwd, bwd)[0] * wts), x))]
    for tag, p, grads in (("fwd", fwd, g_f), ("bwd", bwd, g_b)):
        for name in ("u_z", "r_z", "b_z", "u_r", "r_r", "b_r", "u_h", "r_h", "b_h"):
            def loss(v, name=name, tag=tag, p=p):
                q = replace(p, **{name: v})
                pair = (q, bwd) if tag == "fwd" else (fwd, q)
                return np.sum(layers.bigru_fwd(x, *pair)[0] * wts)
            entries.append((f"bigru/{tag}.{name}", grads[name],
                            _fd_wrt(loss, getattr(p, name))))
    return entries


def check_temporal_attention_gradients(seed=16):
    rng = RngState(seed)
    x = rng.uniform(-1, 1, (2, 5, 3))
    p = TemporalAttentionParams(w=rng.uniform(-1, 1, (5, 5)), b=rng.uniform(-1, 1, (5,)))
    wts = _weights(rng, x.shape)
    _, cache = layers.temporal_attention_fwd(x, p)
    gx, grads = layers.temporal_attention_bwd(wts, cache)
    return [
        ("temporal_attention/x", gx, _fd_wrt(
            lambda v: np.sum(layers.temporal_attention_fwd(v, p)[0] * wts), x)),
        ("temporal_attention/w", grads["w"], _fd_wrt(
            lambda v: np.sum(layers.temporal_attention_fwd(x, replace(p, w=v))[0] * wts), p.w)),
        ("temporal_attention/b", grads["b"], _fd_wrt(
            lambda v: np.sum(layers.temporal_attention_fwd(x, replace(p, b=v))[0] * wts), p.b)),
    ]


def check_channel_attention_gradients(seed=17):
    rng = RngState(seed)
    x = rng.uniform(-1, 1, (2, 4, 4))
    p = ChannelAttentionParams(
        w1=rng.uniform(-1, 1, (4, 2)), b1=rng.uniform(-0.5, 0.5, (2,)),
        w2=rng.uniform(-1, 1, (2, 4)), b2=rng.uniform(-0.5, 0.5, (4,)))
    wts = _weights(rng, x.shape)
    _, cache = layers.channel_attention_fwd(x, p)
    gx, grads = layers.channel_attention_bwd(wts, cache)
    entries = [("channel_attention/x", gx, _fd_wrt(
        lambda v: np.sum(layers.channel_attention_fwd(v, p)[0] * wts), x))]
    for name in ("w1", "b1", "w2", "b2"):
        entries.append((f"channel_attention/{name}", grads[name], _fd_wrt(
            lambda v, name=name: np.sum(
                layers.channel_attention_fwd(x, replace(p, **{name: v}))[0] * wts),
            getattr(p, name))))
    return entries


def check_pool_dense_gradients(seed=18):
    rng = RngState(seed)
    entries = []
    x = rng.uniform(-1, 1, (3, 5, 4))
    wts = _weights(rng, (3, 4))
    _, cache = layers.global_max_pool_fwd(x)
    gx = layers.global_max_pool_bwd(wts, cache)
    entries.append(("global_max_pool/x", gx, _fd_wrt(
        lambda v: np.sum(layers.global_max_pool_fwd(v)[0] * wts), x)))
    for act in ("linear", "relu", "sigmoid", "softmax"):
        xd = rng.uniform(-1, 1, (3, 4))
        p = DenseParams(w=rng.uniform(-1, 1, (4, 3)), b=rng.uniform(-1, 1, (3,)))
        wd = _weights(rng, (3, 3))
        _, cache = layers.dense_fwd(xd, p, act)
        gx, grads = layers.dense_bwd(wd, cache)
        entries.append((f"dense[{act}]/x", gx, _fd_wrt(
            lambda v: np.sum(layers.dense_fwd(v, p, act)[0] * wd), xd)))
        entries.append((f"dense[{act}]/w", grads["w"], _fd_wrt(
            lambda v: np.sum(layers.dense_fwd(xd, replace(p, w=v), act)[0] * wd), p.w)))
        entries.append((f"dense[{act}]/b", grads["b"], _fd_wrt(
            lambda v: np.sum(layers.dense_fwd(xd, replace(p, b=v), act)[0] * wd), p.b)))
    return entries


def check_loss_gradients(seed=19):
    rng = RngState(seed)
    entries = []
    p = rng.uniform(0.05, 0.95, (6, 1))
    y = (rng.random((6,)) > 0.5).astype(np.int64)
    loss, grad = training.bce_loss(y, p)
    entries.append(("bce_loss/p", grad, _fd_wrt(
        lambda v: training.bce_loss(y, v)[0], p)))
    probs = softmax(rng.uniform(-1, 1, (5, 4)), axis=1)
    yc = np.array([0, 3, 1, 2, 0])
    loss, grad = training.scce_loss(yc, probs)
    entries.append(("scce_loss/p", grad, _fd_wrt(
        lambda v: training.scce_loss(yc, v)[0], probs)))
    return entries


TINY_CONFIG = model.ModelConfig(
    input_dim=12, kernel_sizes=(3, 5), filters=4, gru_units=3, attn_ratio=2,
    hidden_units=8, head="multiclass", n_classes=3, init_seed=7)


def check_model_gradients(cfg=None, seed=20, h=3e-4):
    """Whole-composite check: mean SCCE loss, frozen dropout masks,
    train-mode batch norm, gradient of every trainable array.

    The step is larger than the per-layer default: the composite loss is
    O(1), so at h=1e-5 subtractive cancellation (~eps/2h) drowns the
    handful of coordinates whose true gradient sits near the 1e-8
    relative-error floor."""
    cfg = cfg or TINY_CONFIG
    rng = RngState(seed)
    params = model.build_model(cfg)
    batch = rng.uniform(-1, 1, (2, cfg.input_dim))
    labels = np.array([0, 2]) % cfg.n_classes
    concat = len(cfg.kernel_sizes) * cfg.filters
    masks = {
        "drop1": rng.random((2, cfg.input_dim, concat)) >= cfg.dropout1,
        "drop2": rng.random((2, cfg.hidden_units)) >= cfg.dropout2,
    }

    def run(p):
        out, tape = model.forward_tape(p, cfg, batch, "train",
                                       dropout_masks=masks, update_stats=False)
        return out, tape

    out, tape = run(params)
    loss, gout = training.scce_loss(labels, out)
    grads = model.backward(gout, tape)
    entries = []
    for name, arr in model.named_arrays(params, trainable_only=True):
        def loss_of(v, name=name):
            saved = arr.copy()
            model.set_named_array(params, name, v)
            try:
                out_v, _ = run(params)
                return training.scce_loss(labels, out_v)[0]
            finally:
                model.set_named_array(params, name, saved)
        entries.append((f"model/{name}", grads[name], finite_diff_grad(loss_of, arr, h=h)))
    return entries


def gradient_entries(inject_gradient_error=0.0):
    entries = []
    for fn in (check_conv_gradients, check_multi_scale_gradients,
               check_batch_norm_gradients, check_dropout_gradients,
               check_bigru_gradients, check_temporal_attention_gradients,
               check_channel_attention_gradients, check_pool_dense_gradients,
               check_loss_gradients):
        entries.extend(fn())
    if inject_gradient_error:
        label, analytic, fd = entries[0]
        entries[0] = (label, analytic + inject_gradient_error, fd)
    return entries


# ---------------------------------------------------------------------------
# invariants and oracles

def check_normalization(n_draws=100, seed=21):
    """Softmax rows and temporal-attention weights sum to one; channel
    scales stay strictly inside (0, 1)."""
    rng = RngState(seed)
    failures = []
    for i in range(n_draws):
        x = rng.uniform(-30, 30, (4, 6))
        s = softmax(x, axis=1)
        if np.abs(s.sum(axis=1) - 1.0).max() > SUM_TOL:
            failures.append(f"softmax sum draw {i}")
        # Strict (0,1) bounds need logit gaps below ~36: past that the
        # dominant entry rounds to exactly 1.0 in float64.
        s = softmax(rng.uniform(-15, 15, (4, 6)), axis=1)
        if not ((s > 0) & (s < 1)).all():
            failures.append(f"softmax bounds draw {i}")
        t_len = 2 + i % 6
        chans = 1 + i % 4
        h = rng.uniform(-3, 3, (2, t_len, chans))
        tp = TemporalAttentionParams(w=rng.uniform(-1, 1, (t_len, t_len)),
                                     b=rng.uniform(-1, 1, (t_len,)))
        a = layers.attention_weights(h, tp)
        if np.abs(a.sum(axis=1) - 1.0).max() > SUM_TOL:
            failures.append(f"temporal attention draw {i}")
        width = 2 * (1 + i % 3)
        cp = ChannelAttentionParams(
            w1=rng.uniform(-2, 2, (width, width // 2)), b1=rng.uniform(-1, 1, (width // 2,)),
            w2=rng.uniform(-2, 2, (width // 2, width)), b2=rng.uniform(-1, 1, (width,)))
        scales = layers.channel_scales(rng.uniform(-3, 3, (2, 4, width)), cp)
        if not ((scales > 0) & (scales < 1)).all():
            failures.append(f"channel attention draw {i}")
    return failures


def brute_force_report(y_true, y_pred, n_classes):
    """Independent recount with plain Python loops; the oracle for
    evaluation.report."""
    per_class = []
    correct = 0
    for c in range(n_classes):
        tp = fp = fn = support = 0
        for t, p in zip(y_true, y_pred):
            if t == c and p == c:
                tp += 1
            if t != c and p == c:
                fp += 1
            if t == c and p != c:
                fn += 1
            if t == c:
                support += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class.append((prec, rec, f1, support))
    for t, p in zip(y_true, y_pred):
        if t == p:
            correct += 1
    total = len(y_true)
    accuracy = correct / total
    macro = tuple(sum(pc[i] for pc in per_class) / n_classes for i in range(3))
    weighted = tuple(sum(pc[i] * pc[3] for pc in per_class) / total for i in range(3))
    return per_class, accuracy, macro, weighted


def check_metric_oracle(n_pairs=1000, n_classes=15, seed=22):
    rng = RngState(seed)
    y_true = (rng.random((n_pairs,)) * n_classes).astype(np.int64)
    y_pred = (rng.random((n_pairs,)) * n_classes).astype(np.int64)
    rep = evaluation.report(evaluation.confusion(y_true, y_pred, n_classes))
    per_class, accuracy, macro, weighted = brute_force_report(
        y_true.tolist(), y_pred.tolist(), n_classes)
    failures = []
    for c, (prec, rec, f1, support) in enumerate(per_class):
        for label, got, want in (("precision", rep.precision[c], prec),
                                 ("recall", rep.recall[c], rec),
                                 ("f1", rep.f1[c], f1)):
            if abs(got - want) > SUM_TOL:
                failures.append(f"class {c} {label}: {got} vs {want}")
        if rep.support[c] != support:
            failures.append(f"class {c} support: {rep.support[c]} vs {support}")
    if abs(rep.accuracy - accuracy) > SUM_TOL:
        failures.append("accuracy mismatch")
    for i, name in enumerate(("precision", "recall", "f1")):
        if abs(rep.macro[name] - macro[i]) > SUM_TOL:
            failures.append(f"macro {name} mismatch")
        if abs(rep.weighted[name] - weighted[i]) > SUM_TOL:
            failures.append(f"weighted {name} mismatch")
    if rep.weighted["recall"] != rep.accuracy:
        failures.append("weighted recall != accuracy")
    return failures


def check_closed_forms():
    """Analytic loss values and the first-step Adam magnitude."""
    failures = []
    uniform = np.full((4, 15), 1.0 / 15.0)
    loss, _ = training.scce_loss(np.array([0, 5, 9, 14]), uniform)
    if abs(loss - np.log(15.0)) > 1e-9:
        failures.append(f"scce uniform rows: {loss} vs ln 15")
    loss, _ = training.bce_loss(np.array([1.0]), np.array([0.5]))
    if abs(loss - np.log(2.0)) > 1e-9:
        failures.append(f"bce(1, 0.5): {loss} vs ln 2")
    cfg = training.TrainConfig()
    for g in (2.0, -0.3, 1e3):
        theta = {"p": np.array([1.0])}
        state = training.init_optimizer(theta)
        training.adam_step(theta, {"p": np.array([g])}, state, cfg)
        step = abs(float(theta["p"][0]) - 1.0)
        if abs(step - cfg.learning_rate) > 1e-6:
            failures.append(f"adam first step for g={g}: {step} vs {cfg.learning_rate}")
    return failures


def run_all(inject_gradient_error=0.0, log=print):
    """Run every suite; returns True when all pass."""
    suites = []
    start = time.perf_counter()
    entries = gradient_entries(inject_gradient_error)
    worst_label, worst = "", 0.0
    for label, analytic, fd in entries:
        err = relative_error(analytic, fd)
        if err > worst:
            worst_label, worst = label, err
    suites.append(("layer+loss gradients",
                   worst <= GRAD_TOL,
                   f"{len(entries)} checks, worst rel err {worst:.2e} ({worst_label})"))
    entries = check_model_gradients()
    worst_label, worst = "", 0.0
    for label, analytic, fd in entries:
        err = relative_error(analytic, fd)
        if err > worst:
            worst_label, worst = label, err
    suites.append(("whole-model gradient",
                   worst <= GRAD_TOL,
                   f"{len(entries)} arrays, worst rel err {worst:.2e} ({worst_label})"))
    failures = check_normalization()
    suites.append(("normalization invariants", not failures,
                   "100 draws" if not failures else "; ".join(failures[:3])))
    failures = check_metric_oracle()
    suites.append(("metric oracle", not failures,
                   "1000 samples vs brute force" if not failures else "; ".join(failures[:3])))
    failures = check_closed_forms()
    suites.append(("closed-form values", not failures,
                   "scce/bce/adam" if not failures else "; ".join(failures[:3])))
    elapsed = time.perf_counter() - start
    ok = True
    for name, passed, detail in suites:
        ok &= passed
        log(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    log(f"{'OK' if ok else 'FAILED'} ({elapsed:.1f}s)")
    return ok
