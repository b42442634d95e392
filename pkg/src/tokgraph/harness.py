"""Training, evaluation and experiment drivers used by the CLI."""
from __future__ import annotations

import csv
import logging
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import config as config_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATION_ROWS, DataConfig, ModelConfig, RunConfig
from .graph import PropagationConfig, appnp_dense, appnp_structured, build_graph, normalized_adjacency_dense
from .head import evaluate as evaluate_predictions
from .head import predict
from .model import TokenGraphModel, param_report
from .optim import Adam, cosine_lr
from .rng import stream
from .synth import SynthTaskConfig, generate_dataset, load_dataset

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["run_id", "epoch", "split", "loss", "top1", "mca", "lr"]
ABLATION_COLUMNS = ["config_row", "run_id", "seed", "split", "loss", "top1", "mca"]
SWEEP_COLUMNS = ["ffn_dim", "run_id", "seed", "split", "loss", "top1", "mca", "encoder_params"]


def load_data(cfg):
    if cfg.data.path:
        data, synth = load_dataset(cfg.data.path)
        if synth != cfg.data.synth:
            raise ValueError("dataset index config differs from the run config's data.synth")
        return data
    return generate_dataset(cfg.data.synth)


def _check_compatible(cfg, clipset):
    s = cfg.data.synth
    want = (s.t_frames, s.height, s.width, s.channels)
    if len(clipset) and tuple(clipset.clips.shape[1:]) != want:
        raise ValueError(f"clips have shape {clipset.clips.shape[1:]}, model expects {want}")
    if len(clipset) and clipset.labels.max() >= s.num_classes:
        raise ValueError("labels exceed the model's class count")


def predict_logits(model, clips, batch_size=16):
    out = []
    for i in range(0, len(clips), batch_size):
        out.append(model(clips[i:i + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.data.synth.num_classes))


def evaluate_model(model, clipset, batch_size=16):
    """Single deterministic forward pass per clip; raises on an empty set."""
    if len(clipset) == 0:
        raise ValueError("cannot evaluate on an empty clip set")
    _check_compatible(model.cfg, clipset)
    logits = predict_logits(model, clipset.clips, batch_size)
    loss = ad.cross_entropy(ad.Tensor(logits), clipset.labels).item()
    return evaluate_predictions(predict(logits), clipset.labels,
                                model.cfg.data.synth.num_classes, loss=loss)


def _fmt(x):
    return repr(float(x))


@dataclass
class TrainResult:
    model: TokenGraphModel
    best_epoch: int
    history: list = field(default_factory=list)
    out_dir: str | None = None

    @property
    def checkpoint(self):
        return os.path.join(self.out_dir, "checkpoint.ckpt") if self.out_dir else None


def train(cfg, data=None, out_dir=None):
    """Minibatch cross-entropy training with Adam and an epoch-level cosine
    schedule.  Keeps the best-validation parameters (ties keep the earlier
    epoch) and writes ``config.json``, ``metrics.csv`` and
    ``checkpoint.ckpt`` under ``out_dir``.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    config_mod.save(cfg, os.path.join(out_dir, "config.json"))
    data = data if data is not None else load_data(cfg)
    tr, va = data["train"], data.get("val")
    _check_compatible(cfg, tr)
    if len(tr) == 0:
        raise ValueError("training split is empty")

    model = TokenGraphModel(cfg)
    params = model.parameters()
    o = cfg.optim
    opt = Adam(params, o.beta1, o.beta2, o.eps)
    shuffle = stream(cfg.seed, "shuffle")
    nclass = cfg.data.synth.num_classes
    ckpt = os.path.join(out_dir, "checkpoint.ckpt")
    save_checkpoint(ckpt, model.params, cfg, {"epoch": -1})

    history = []
    best_key, best_epoch, stale = None, -1, 0
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for epoch in range(o.epochs):
            t0 = time.perf_counter()
            lr = cosine_lr(epoch, o.epochs, o.lr_max, o.lr_min)
            order = shuffle.permutation(len(tr))
            preds, total = np.empty(len(tr), dtype=np.int64), 0.0
            for start in range(0, len(tr), o.batch_size):
                idx = order[start:start + o.batch_size]
                with ad.Tape() as tape:
                    logits = model(tr.clips[idx])
                    loss = ad.cross_entropy(logits, tr.labels[idx])
                tape.backward(loss, params)
                opt.step(lr)
                preds[start:start + len(idx)] = predict(logits)
                total += loss.item() * len(idx)
            rep = evaluate_predictions(preds, tr.labels[order], nclass, loss=total / len(tr))
            rows = [("train", rep)]
            if va is not None and len(va):
                rows.append(("val", evaluate_model(model, va)))
            for split, r in rows:
                writer.writerow([cfg.run_id, epoch, split, _fmt(r.loss), _fmt(r.top1), _fmt(r.mca), _fmt(lr)])
                history.append({"epoch": epoch, "split": split, "loss": r.loss,
                                "top1": r.top1, "mca": r.mca, "lr": lr})
            fh.flush()
            sel = rows[-1][1]
            key = (sel.top1, -sel.loss)
            log.info("%s epoch %d lr %.2e train %.3f/%.3f %s %.3f/%.3f (%.1fs)", cfg.run_id, epoch, lr,
                     rep.loss, rep.top1, rows[-1][0], sel.loss, sel.top1, time.perf_counter() - t0)
            if best_key is None or key > best_key:
                best_key, best_epoch, stale = key, epoch, 0
                save_checkpoint(ckpt, model.params, cfg, {"epoch": epoch})
            else:
                stale += 1
            if o.patience is not None and stale >= o.patience:
                break

    best, _, _ = load_checkpoint(ckpt)
    return TrainResult(TokenGraphModel(cfg, best), best_epoch, history, out_dir)


def load_model(path):
    params, cfg, meta = load_checkpoint(path)
    if cfg is None:
        raise ValueError(f"{path}: checkpoint carries no run config")
    return TokenGraphModel(cfg, params)


def evaluate(checkpoint, clipset, out_path=None):
    model = load_model(checkpoint) if isinstance(checkpoint, str) else checkpoint
    report = evaluate_model(model, clipset)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(report.to_text())
    return report


def _run_and_test(cfg, data, out_dir):
    res = train(cfg, data, out_dir)
    rep = evaluate(res.model, data["test"], os.path.join(out_dir, "test_report.txt"))
    return res, rep


def ablate(cfg, data=None, out_dir=None, seeds=None, rows=None):
    """Train and test every ablation row (shared data and seeds).

    Returns ``{row: [EvalReport per seed]}`` and writes ``ablation.csv``.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    data = data if data is not None else load_data(cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    rows = list(rows) if rows is not None else list(ABLATION_ROWS)
    results = {}
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            results[row] = []
            for seed in seeds:
                rid = f"{cfg.run_id}-{row}-s{seed}"
                sub = _replace(cfg, run_id=rid, seed=seed, ablation=ABLATION_ROWS[row])
                _, rep = _run_and_test(sub, data, os.path.join(out_dir, f"{row}_s{seed}"))
                writer.writerow([row, rid, seed, "test", _fmt(rep.loss), _fmt(rep.top1), _fmt(rep.mca)])
                fh.flush()
                results[row].append(rep)
    return results


def sweep_ffn(cfg, widths, data=None, out_dir=None, seeds=None):
    widths = list(widths)
    if not widths:
        raise ValueError("need at least one FFN width")
    if any(int(w) < 1 for w in widths):
        raise ValueError(f"FFN widths must be positive, got {widths}")
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    data = data if data is not None else load_data(cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    results = {}
    with open(os.path.join(out_dir, "sweep_ffn.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for w in widths:
            results[w] = []
            for seed in seeds:
                rid = f"{cfg.run_id}-ffn{w}-s{seed}"
                sub = cfg.replace(**{"run_id": rid, "seed": seed, "model.ffn_dim": int(w)})
                _, rep = _run_and_test(sub, data, os.path.join(out_dir, f"ffn{w}_s{seed}"))
                enc = param_report(sub).counts["encoder"]
                writer.writerow([w, rid, seed, "test", _fmt(rep.loss), _fmt(rep.top1), _fmt(rep.mca), enc])
                fh.flush()
                results[w].append(rep)
    return results


def _replace(cfg, ablation=None, **top):
    d = config_mod.to_dict(cfg)
    d.update(top)
    if ablation is not None:
        d["ablation"] = config_mod.to_dict(ablation)
    return config_mod.from_dict(d)


def median_top1(reports):
    return statistics.median(r.top1 for r in reports)


def acceptance_config(seed=0, epochs=30, long_tail_ratio=None, out_dir="runs/acceptance"):
    """Four rotation classes, T=16, 32x32 px, 200 train / 100 test clips.

    Patches are 8x8 (4x4 token grid) so a three-seed run fits on one core,
    and the starting phase is jittered over a tenth of a turn.
    """
    synth = SynthTaskConfig(phase_jitter=0.1, long_tail_ratio=long_tail_ratio)
    model = ModelConfig(patch=(8, 8), channels=64, encoder_layers=2, heads=4, ffn_dim=128,
                        alpha=0.1, k_prop=10)
    return RunConfig(run_id="acceptance", seed=seed, out_dir=out_dir, data=DataConfig(synth=synth),
                     model=model, optim=config_mod.OptimConfig(epochs=epochs))


# ---------------------------------------------------------------------------
# gradient check


def tiny_config(num_classes=3):
    """T=2, 2x2 token grid, C=8: small enough for exhaustive central differences."""
    synth = SynthTaskConfig(num_classes=num_classes, t_frames=2, height=4, width=4,
                            rotation_extents=tuple(0.25 * (k + 1) for k in range(num_classes)))
    model = ModelConfig(patch=(2, 2), channels=8, backbone_depth=1, encoder_layers=1,
                        heads=2, ffn_dim=16, alpha=0.1, k_prop=3)
    return RunConfig(run_id="gradcheck", data=DataConfig(synth=synth), model=model)


def gradcheck(cfg=None, fault=False, eps=1e-6, batch=2):
    """Central-difference check of the whole pipeline loss.

    Returns ``(max_error, {parameter_name: error})``.  Parameters are
    jittered away from their structured initial values first.
    """
    cfg = cfg or tiny_config()
    T, H, W = cfg.grid
    if T * H * W > 32 or cfg.model.channels > 8:
        raise ValueError("gradcheck needs N <= 32 tokens and C <= 8 channels")
    model = TokenGraphModel(cfg, fault=fault)
    rng = stream(cfg.seed, "gradcheck")
    for p in model.parameters():
        p.data += rng.normal(0.0, 0.1, size=p.shape)
    s = cfg.data.synth
    clips = rng.normal(size=(batch, s.t_frames, s.height, s.width, s.channels))
    labels = rng.integers(0, s.num_classes, size=batch)

    def f():
        return ad.cross_entropy(model(clips), labels)

    per = {name: ad.grad_check(f, [p], eps) for name, p in model.params.items()}
    return max(per.values()), per


# ---------------------------------------------------------------------------
# benchmark


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes, k_prop=10, alpha=0.1, dtype=np.float64, repeats=3, seed=0):
    """Per-call wall time of dense vs structured propagation.

    ``sizes`` is an iterable of ``(T, P, C)``.  The dense operator is built
    outside the timed region.  Returns a list of row dicts.
    """
    rng = stream(seed, "bench")
    cfg = PropagationConfig(alpha=alpha, k_prop=k_prop)
    rows = []
    for T, P, C in sizes:
        g = build_graph(T, P, cfg)
        a = normalized_adjacency_dense(g, dtype)
        h0 = rng.normal(size=(T * P, C)).astype(dtype)
        td = _time(lambda: appnp_dense(h0, g, cfg, adjacency=a), repeats)
        ts = _time(lambda: appnp_structured(h0, T, P, cfg), repeats)
        rows.append({"T": T, "P": P, "C": C, "k_prop": k_prop, "dense_s": td,
                     "structured_s": ts, "speedup": td / ts})
    return rows


def scaling_exponent(ps, times):
    """Least-squares slope of log(time) against log(P)."""
    return float(np.polyfit(np.log(ps), np.log(times), 1)[0])


def write_rows(path, rows, columns=None):
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow(r)


# ---------------------------------------------------------------------------
# feature dumps


def dump_features(checkpoint, clipset, stage, out_path=None, batch_size=16):
    """Pooled features per clip at ``stage``; CSV columns ``label, f0..f{C-1}``."""
    model = load_model(checkpoint) if isinstance(checkpoint, str) else checkpoint
    _check_compatible(model.cfg, clipset)
    feats = [model.pooled_features(clipset.clips[i:i + batch_size], stage)
             for i in range(0, len(clipset), batch_size)]
    feats = np.concatenate(feats) if feats else np.zeros((0, model.cfg.model.channels))
    if out_path:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"f{i}" for i in range(feats.shape[1])])
            for lab, row in zip(clipset.labels, feats):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])
    return feats


def centroid_separation(features, labels, normalize=True):
    """Mean pairwise distance between class centroids.

    With ``normalize`` the distance is divided by the mean distance of a
    feature to the global mean, so stages with different scales compare.
    """
    classes = np.unique(labels)
    cents = np.stack([features[labels == c].mean(axis=0) for c in classes])
    d = [np.linalg.norm(cents[i] - cents[j]) for i in range(len(cents)) for j in range(i + 1, len(cents))]
    if not normalize:
        return float(np.mean(d))
    return float(np.mean(d)) / (float(np.linalg.norm(features - features.mean(axis=0), axis=1).mean()) + 1e-12)
