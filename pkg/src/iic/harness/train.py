"""Training loops for image clustering and segmentation, and checkpoint evaluation."""

import logging
import os

import numpy as np

from .. import data as dataio
from .. import info
from ..engine import autograd as ag
from ..engine.checkpoint import load_checkpoint, save_checkpoint
from ..engine.network import NetworkConfig, build_network
from ..engine.optim import Adam
from ..evalmap import accuracy, confusion_matrix, hungarian_match, majority_map, select_subhead
from ..pairing import center_crop, jitter_pairs, make_pair_batch, sobel_batch
from ..segment import DisplacementSet, seg_loss
from ..engine.functional import bilinear_sample
from ..pairing import sampling_grid

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------ setup


def load_dataset(cfg):
    if cfg.dataset == "gauss3":
        ds = dataio.gaussian_dataset(cfg.n_per_cluster, cfg.sigma, cfg.jitter, cfg.data_seed)
    elif cfg.dataset == "textures":
        ds = dataio.synth_texture_seg(cfg.n_images, cfg.image_size, 3, np.random.default_rng(cfg.data_seed))
    elif cfg.dataset == "mnist":
        ds = dataio.load_mnist(cfg.data_dir, cfg.n_samples or None)
    elif cfg.dataset == "idx":
        ds = dataio.read_idx(cfg.idx_images, cfg.idx_labels or None, cfg.n_samples or None)
    elif cfg.dataset == "digits":
        ds = dataio.sklearn_digits(cfg.image_size)
        if cfg.n_samples:
            ds = dataio.Dataset("images", ds.samples[: cfg.n_samples], ds.labels[: cfg.n_samples])
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    return dataio.make_splits(ds, cfg.split, cfg.train_frac, cfg.data_seed)


def input_shape(cfg, ds):
    if ds.kind == "vectors":
        return (ds.samples.shape[1],)
    c, H, W = ds.samples.shape[1:]
    if cfg.crop_size:
        H = W = cfg.crop_size
    return (2 if cfg.sobel else c, H, W)


def network_for(cfg, ds):
    return build_network(NetworkConfig(
        base=cfg.base, in_shape=input_shape(cfg, ds), k_gt=cfg.k_gt, k_aux=cfg.k_aux, h=cfg.h,
        dense_output=cfg.task == "segment", dtype=cfg.dtype, seed=cfg.seed,
    ))


def clamp_eps_for(cfg):
    return info.EPS32 if cfg.dtype == "float32" else info.EPS64


def prepare_inputs(cfg, x):
    x = np.asarray(x, dtype=cfg.dtype)
    if cfg.sobel and x.ndim == 4:
        x = sobel_batch(x)
    return x


def eval_inputs(cfg, ds, idx):
    x = ds.samples[idx]
    if ds.kind == "images":
        x = center_crop(x, cfg.crop_size or None)
    return prepare_inputs(cfg, x)


def epoch_kind(cfg, epoch):
    """Even epochs train the main heads, odd epochs the auxiliary ones."""
    if cfg.k_aux and epoch % 2 == 1:
        return "main", "aux"
    return "aux", "main"


# ------------------------------------------------------------- objective


def make_pairs(cfg, ds, batch, rng):
    if ds.kind == "vectors":
        return jitter_pairs(ds.samples, batch, cfg.r, cfg.jitter, rng)
    return make_pair_batch(ds.samples, batch, cfg.r, cfg.policy(), rng, cfg.crop_size or None)


def head_loss(cfg, out, m, pairs, image_shape):
    eps = clamp_eps_for(cfg)
    if cfg.task == "segment":
        return seg_loss(out[:m], out[m:], pairs.specs, DisplacementSet(cfg.d), cfg.lam,
                        cfg.average_mode, image_shape, eps)
    return info.iic_loss_node(out[:m], out[m:], cfg.lam, eps)


def run_epoch(cfg, net, opt, ds, rng, epoch):
    """One pass over the training split; returns mean loss per sub-head for both kinds."""
    idle, active = epoch_kind(cfg, epoch)
    train = ds.train_indices
    order = train[rng.permutation(len(train))]
    batches = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
    batch_seeds = rng.integers(0, 2**63 - 1, size=len(batches))
    sums = {"main": np.zeros(cfg.h), "aux": np.zeros(cfg.h)}
    for batch, seed in zip(batches, batch_seeds):
        pairs = make_pairs(cfg, ds, batch, np.random.default_rng(seed))
        m = len(pairs.originals)
        x = prepare_inputs(cfg, np.concatenate([pairs.originals, pairs.transformed]))
        image_shape = x.shape[2:] if x.ndim == 4 else None
        net.zero_grad()
        feats = net.features(x, training=True)
        losses = [head_loss(cfg, o, m, pairs, image_shape) for o in net.heads(feats, active)]
        for i, loss in enumerate(losses):
            if not np.isfinite(loss.value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, {active} head {i}, batch seed {seed}"
                )
            sums[active][i] += float(loss.value)
        total = losses[0]
        for loss in losses[1:]:
            total = total + loss
        ag.backward(total)
        opt.step()
        if cfg.k_aux:
            frozen = ag.const(feats.value)
            for i, o in enumerate(net.heads(frozen, idle)):
                sums[idle][i] += float(head_loss(cfg, o, m, pairs, image_shape).value)
    n = len(batches)
    return {k: v / n for k, v in sums.items()}


# ------------------------------------------------------------- evaluation


def predict(cfg, net, ds, idx, kind, chunk=None):
    """Per-head probabilities for samples ``idx`` in eval mode.

    Segmentation outputs are upsampled to the image grid before returning.
    """
    chunk = chunk or (32 if ds.kind == "images" else 4096)
    outs = None
    for start in range(0, len(idx), chunk):
        x = eval_inputs(cfg, ds, idx[start : start + chunk])
        heads = net.forward(x, training=False, kinds=(kind,))[kind]
        probs = [h.value for h in heads]
        if cfg.task == "segment":
            probs = [upsample(p, x.shape[2:]) for p in probs]
        outs = probs if outs is None else [np.concatenate([a, b]) for a, b in zip(outs, probs)]
    return outs


def upsample(p, shape):
    """Corner-aligned bilinear resize of [n, C, h, w] probabilities to ``shape``."""
    n, _, h, w = p.shape
    if (h, w) == tuple(shape):
        return p
    H, W = shape
    A = np.diag([(h - 1) / max(H - 1, 1), (w - 1) / max(W - 1, 1), 1.0])
    rows, cols = sampling_grid(A, shape)
    out, _ = bilinear_sample(p, np.broadcast_to(rows, (n,) + tuple(shape)), np.broadcast_to(cols, (n,) + tuple(shape)))
    return out.value


def truths_for(ds, idx):
    return np.asarray(ds.labels)[idx]


def evaluate_heads(cfg, net, ds, losses_main):
    idx = ds.eval_indices
    probs = predict(cfg, net, ds, idx, "main")
    truths = truths_for(ds, idx)
    accs, entropies, min_marg = [], [], []
    for p in probs:
        pred = p.argmax(axis=1)
        counts = confusion_matrix(pred, truths, cfg.k_gt, cfg.k_gt)
        accs.append(accuracy(pred, truths, hungarian_match(counts)))
        soft = p.mean(axis=tuple(i for i in range(p.ndim) if i != 1))
        entropies.append(info.entropy(soft / soft.sum()))
        min_marg.append(float(np.bincount(pred.ravel(), minlength=cfg.k_gt).min() / pred.size))
    best = select_subhead(losses_main)
    return accs, best, entropies, min_marg


def render_predictions(cfg, net, ds, epoch, out_dir):
    idx = ds.eval_indices[: cfg.render_predictions]
    if not len(idx):
        return
    probs = predict(cfg, net, ds, idx, "main")[0]
    pred = probs.argmax(axis=1)
    emap = hungarian_match(confusion_matrix(pred, truths_for(ds, idx), cfg.k_gt, cfg.k_gt))
    for j, i in enumerate(idx):
        dataio.write_pnm(os.path.join(out_dir, f"pred_{epoch:04d}_{int(i):03d}.pnm"),
                         emap.apply(pred[j]), palette=dataio.PALETTE)


def checkpoint_arrays(net, epoch, losses):
    arrays = dict(net.state_dict())
    arrays["meta.epoch"] = np.array([epoch], dtype=np.float64)
    arrays["meta.subhead_loss_main"] = np.asarray(losses["main"], dtype=np.float64)
    arrays["meta.subhead_loss_aux"] = np.asarray(losses["aux"], dtype=np.float64)
    return arrays


# ----------------------------------------------------------------- loops


def initial_losses(cfg, net, ds, rng):
    """Sub-head losses of an untrained network over one pairing pass, no updates."""
    idx = ds.train_indices[: cfg.batch_size]
    pairs = make_pairs(cfg, ds, idx, rng)
    m = len(pairs.originals)
    x = prepare_inputs(cfg, np.concatenate([pairs.originals, pairs.transformed]))
    out = net.forward(x, training=False)
    shape = x.shape[2:] if x.ndim == 4 else None
    return {
        k: np.array([float(head_loss(cfg, o, m, pairs, shape).value) for o in out[k]]) if out[k] else np.zeros(cfg.h)
        for k in ("main", "aux")
    }


def train(cfg, progress=None):
    """Run the configured task; writes metrics.csv, checkpoints and predictions into ``cfg.out``."""
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    ds = load_dataset(cfg)
    if ds.labels is None or not len(ds.eval_indices):
        raise ValueError("dataset has no labelled evaluation samples")
    net = network_for(cfg, ds)
    opt = Adam(net.named_parameters(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    record = None
    history = []
    with dataio.MetricsWriter(os.path.join(cfg.out, "metrics.csv"), cfg.h) as writer:
        if cfg.epochs == 0:
            losses = initial_losses(cfg, net, ds, rng)
            record = _record(cfg, net, ds, -1, losses)
        for epoch in range(cfg.epochs):
            losses = run_epoch(cfg, net, opt, ds, rng, epoch)
            record = _record(cfg, net, ds, epoch, losses)
            writer.append(record)
            history.append(record)
            if cfg.checkpoint_every and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1):
                save_checkpoint(os.path.join(cfg.out, f"epoch_{epoch:04d}.ckpt"),
                                checkpoint_arrays(net, epoch, losses))
            if cfg.task == "segment" and cfg.render_predictions:
                render_predictions(cfg, net, ds, epoch, cfg.out)
            if progress is not None:
                progress(record)
            log.info("epoch %d loss_main %.4f acc_best %.4f", epoch, record.loss_main, record.acc_best)
    record.history = history
    record.network = net
    return record


def _record(cfg, net, ds, epoch, losses):
    accs, best, ents, min_marg = evaluate_heads(cfg, net, ds, losses["main"])
    return dataio.MetricsRecord(
        epoch=epoch,
        loss_main=float(np.mean(losses["main"])),
        loss_aux=float(np.mean(losses["aux"])) if cfg.k_aux else 0.0,
        acc_best=accs[best],
        acc_avg=float(np.mean(accs)),
        acc_std=float(np.std(accs)),
        marginal_entropy_per_head=ents,
        subhead_acc=accs,
        best_subhead=best,
        min_marginal=min_marg,
    )


def train_cluster(cfg, progress=None):
    if cfg.task != "cluster":
        raise ValueError("train_cluster needs task = cluster")
    return train(cfg, progress)


def train_segment(cfg, progress=None):
    if cfg.task != "segment":
        raise ValueError("train_segment needs task = segment")
    return train(cfg, progress)


def evaluate(checkpoint, cfg, protocol="one_to_one"):
    """Score every sub-head of a checkpoint.

    one_to_one: main heads, Hungarian matching on the eval split.
    many_to_one: auxiliary heads, majority map fitted on the train split and
    applied to the eval split.
    """
    ds = load_dataset(cfg)
    net = network_for(cfg, ds)
    arrays = load_checkpoint(checkpoint)
    net.load_state_dict(arrays)
    if protocol == "one_to_one":
        kind, k = "main", cfg.k_gt
    elif protocol == "many_to_one":
        if not cfg.k_aux:
            raise ValueError("many_to_one evaluation needs auxiliary heads (k_aux > 0)")
        kind, k = "aux", cfg.k_aux
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    losses = arrays[f"meta.subhead_loss_{kind}"]
    if len(losses) != cfg.h:
        raise ValueError(f"checkpoint holds {len(losses)} sub-heads, config says h={cfg.h}")
    ev = ds.eval_indices
    probs_eval = predict(cfg, net, ds, ev, kind)
    truths_eval = truths_for(ds, ev)
    if protocol == "many_to_one":
        tr = ds.train_indices
        probs_train = predict(cfg, net, ds, tr, kind)
        truths_train = truths_for(ds, tr)
    accs, confusions = [], []
    for i, p in enumerate(probs_eval):
        pred = p.argmax(axis=1)
        if protocol == "one_to_one":
            counts = confusion_matrix(pred, truths_eval, k, cfg.k_gt)
            emap = hungarian_match(counts)
        else:
            fit = confusion_matrix(probs_train[i].argmax(axis=1), truths_train, k, cfg.k_gt)
            emap = majority_map(fit)
            counts = confusion_matrix(pred, truths_eval, k, cfg.k_gt)
        accs.append(accuracy(pred, truths_eval, emap))
        confusions.append(counts)
    best = select_subhead(losses)
    return {
        "protocol": protocol,
        "heads": kind,
        "epoch": int(arrays["meta.epoch"][0]),
        "subhead_acc": accs,
        "subhead_loss": [float(v) for v in losses],
        "acc_avg": float(np.mean(accs)),
        "acc_std": float(np.std(accs)),
        "std_note": "standard deviation across sub-heads of one run",
        "best_subhead": best,
        "acc_best": accs[best],
        "confusion_best": confusions[best],
    }
