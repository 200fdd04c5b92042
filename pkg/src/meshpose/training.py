"""Optimizer, training loop, evaluation and single-pair transfer.

The training loop is the sole mutator of parameters and optimizer state.
Everything is seeded: pair sampling, the shared per-step vertex shuffle,
and parameter initialization, so a replay with the same seed reproduces
the metrics log byte for byte. Gradients of a batch are reduced in
ascending pair order before one optimizer step.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses, model
from .mesh import (
    edge_list,
    invert_frame,
    load_obj,
    normalize_to_unit_cube,
    directed_ring_edges,
    vertex_rings,
)


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 5e-5
    lr_milestones: tuple = (200, 500)
    lr_decay: float = 0.1
    batch_size: int = 8
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    model: "model.ModelConfig" = field(default_factory=model.ModelConfig)
    seed: int = 0
    checkpoint_interval: int = 100
    # cap on pairs visited per epoch; resampled (seeded) each epoch when
    # the manifest is larger
    pairs_per_epoch: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(self.lr_milestones)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ValueError(f"milestones must increase: {self.lr_milestones}")
        if self.batch_size < 1 or self.epochs < 1 or self.checkpoint_interval < 1:
            raise ValueError("epochs, batch_size, checkpoint_interval must be >= 1")


def learning_rate_at(config, epoch):
    """Effective LR for a 1-based epoch; decay applies after each milestone."""
    drops = sum(1 for m in config.lr_milestones if m < epoch)
    return config.learning_rate * config.lr_decay**drops


# --------------------------------------------------------------------------
# plain-text key=value config files

_CONFIG_KEYS = {
    "epochs": int,
    "learning_rate": float,
    "lr_decay": float,
    "batch_size": int,
    "seed": int,
    "checkpoint_interval": int,
    "pairs_per_epoch": int,
}


def parse_config(path):
    values = {}
    for lineno, raw in enumerate(open(path, "r", encoding="ascii"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val

    cfg = TrainConfig()
    kwargs = {}
    for key, conv in _CONFIG_KEYS.items():
        if key in values:
            kwargs[key] = conv(values.pop(key))
    if "lr_milestones" in values:
        raw = values.pop("lr_milestones")
        kwargs["lr_milestones"] = tuple(int(s) for s in raw.split(",") if s.strip())
    weights = {}
    for key in ("lambda_rec", "lambda_edge", "lambda_contra"):
        if key in values:
            weights[key] = float(values.pop(key))
    if weights:
        kwargs["weights"] = replace(losses.LossWeights(), **weights)
    model_kwargs = {}
    if "desk_scale_factor" in values:
        model_kwargs["desk_scale_factor"] = float(values.pop("desk_scale_factor"))
    if "num_decoders" in values:
        n = int(values.pop("num_decoders"))
        model_kwargs["num_decoders"] = n
        model_kwargs["decoder_channels"] = (
            model.LIR_DECODER_CHANNELS if n == 3 else model.ModelConfig().decoder_channels
        )
    for key in ("encoder_channels", "decoder_channels"):
        if key in values:
            model_kwargs[key] = tuple(int(s) for s in values.pop(key).split(","))
    if model_kwargs:
        kwargs["model"] = replace(model.ModelConfig(), **model_kwargs)
    if values:
        raise ValueError(f"{path}: unknown config keys {sorted(values)}")
    return replace(cfg, **kwargs)


def write_config(path, config):
    with open(path, "w", encoding="ascii") as f:
        f.write(f"epochs = {config.epochs}\n")
        f.write(f"learning_rate = {config.learning_rate:.17g}\n")
        f.write(f"lr_milestones = {','.join(str(m) for m in config.lr_milestones)}\n")
        f.write(f"lr_decay = {config.lr_decay:.17g}\n")
        f.write(f"batch_size = {config.batch_size}\n")
        f.write(f"seed = {config.seed}\n")
        f.write(f"checkpoint_interval = {config.checkpoint_interval}\n")
        f.write(f"pairs_per_epoch = {config.pairs_per_epoch}\n")
        f.write(f"lambda_rec = {config.weights.lambda_rec:.17g}\n")
        f.write(f"lambda_edge = {config.weights.lambda_edge:.17g}\n")
        f.write(f"lambda_contra = {config.weights.lambda_contra:.17g}\n")
        m = config.model
        f.write(f"encoder_channels = {','.join(str(c) for c in m.encoder_channels)}\n")
        f.write(f"decoder_channels = {','.join(str(c) for c in m.decoder_channels)}\n")
        f.write(f"num_decoders = {m.num_decoders}\n")
        f.write(f"desk_scale_factor = {m.desk_scale_factor:.17g}\n")


# --------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(named, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState(
        m=[np.zeros_like(t.data) for _, t in named],
        v=[np.zeros_like(t.data) for _, t in named],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(named, state, lr):
    """Standard Adam update with bias correction, in place."""
    for name, tensor in named:
        if tensor.grad is None:
            raise ValueError(f"adam_step: parameter {name} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (name, tensor) in enumerate(named):
        g = tensor.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        tensor.data = tensor.data - lr * mhat / (np.sqrt(vhat) + state.eps)


# --------------------------------------------------------------------------
# training


class _MeshCache:
    def __init__(self, root):
        self.root = root
        self._cache = {}

    def get(self, rel_path):
        if rel_path not in self._cache:
            self._cache[rel_path] = load_obj(os.path.join(self.root, rel_path))
        return self._cache[rel_path]


def _prepare_pair(cache, triple, perm):
    """Shared vertex shuffle, then per-pair normalization (identity frame)."""
    from .mesh import permute_vertices

    identity, pose, gt = (cache.get(p) for p in triple)
    if not (identity.same_topology(pose) and identity.same_topology(gt)):
        raise ValueError(f"pair {triple} does not share topology")
    if perm is not None:
        identity = permute_vertices(identity, perm)
        pose = permute_vertices(pose, perm)
        gt = permute_vertices(gt, perm)
    identity_n, center, scale = normalize_to_unit_cube(identity)
    from .mesh import apply_frame

    return identity_n, apply_frame(pose, center, scale), apply_frame(gt, center, scale)


def train(config, dataset, out_dir):
    """Epoch loop over shuffled training pairs; returns (checkpoint, log) paths.

    Writes ``metrics.tsv`` (one tab-separated line per epoch: epoch, lr,
    full loss, reconstruction, edge, geodesic-contrast means), periodic
    checkpoints and the final ``checkpoint.gctf``.
    """
    os.makedirs(out_dir, exist_ok=True)
    if not dataset.train:
        raise ValueError("dataset has no training pairs")
    rng = np.random.default_rng(config.seed)
    params = model.init_params(config.model, seed=config.seed)
    named = model.named_parameters(params)
    tensors = [t for _, t in named]
    opt = init_optimizer(named)
    cache = _MeshCache(dataset.root)

    first = cache.get(dataset.train[0][0])
    base_edges = edge_list(first)
    base_src, base_dst = directed_ring_edges(vertex_rings(first))
    n_vertices = first.vertex_count

    write_config(os.path.join(out_dir, "config.txt"), config)
    metrics_path = os.path.join(out_dir, "metrics.tsv")
    checkpoint_path = os.path.join(out_dir, "checkpoint.gctf")
    log_lines = []

    for epoch in range(1, config.epochs + 1):
        lr = learning_rate_at(config, epoch)
        order = rng.permutation(len(dataset.train))
        if config.pairs_per_epoch and len(order) > config.pairs_per_epoch:
            order = order[: config.pairs_per_epoch]
        sums = np.zeros(4)
        count = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            ad.zero_grads(tensors)
            for pair_idx in batch:
                perm = rng.permutation(n_vertices)
                identity, pose, gt = _prepare_pair(
                    cache, dataset.train[pair_idx], perm
                )
                edges = perm[base_edges]
                src, dst = perm[base_src], perm[base_dst]
                tape = ad.Tape()
                with tape:
                    pred = model.forward_vertices(identity, pose, params)
                    gt_t = ad.Tensor(gt.vertices.astype(params.dtype))
                    rec = losses.reconstruction_loss(pred, gt_t)
                    edge = losses.edge_loss(pred, gt_t, edges)
                    cgc = losses._cgc_from_directed(pred, gt_t, src, dst, n_vertices)
                    full = ad.add(
                        ad.add(
                            ad.scale(rec, config.weights.lambda_rec),
                            ad.scale(edge, config.weights.lambda_edge),
                        ),
                        ad.scale(cgc, config.weights.lambda_contra),
                    )
                ad.backward(full)
                sums += (full.item(), rec.item(), edge.item(), cgc.item())
                count += 1
            inv = 1.0 / len(batch)
            for t in tensors:
                t.grad = t.grad * inv if t.grad is not None else None
            adam_step(named, opt, lr)
        means = sums / max(count, 1)
        log_lines.append(
            f"{epoch}\t{lr:.10g}\t{means[0]:.10g}\t{means[1]:.10g}"
            f"\t{means[2]:.10g}\t{means[3]:.10g}"
        )
        if epoch % config.checkpoint_interval == 0 and epoch != config.epochs:
            model.save_checkpoint(
                os.path.join(out_dir, f"checkpoint_epoch{epoch}.gctf"), params
            )
    model.save_checkpoint(checkpoint_path, params)
    with open(metrics_path, "w", encoding="ascii") as f:
        f.write("\n".join(log_lines) + "\n")
    return checkpoint_path, metrics_path


# --------------------------------------------------------------------------
# evaluation and transfer


@dataclass
class EvalReport:
    split: str
    per_pair: list  # pmd per manifest line, raw units
    mean_pmd: float

    def format(self):
        lines = [f"pair\tpmd\tpmd_x1e-4"]
        for i, p in enumerate(self.per_pair):
            lines.append(f"{i}\t{p:.10g}\t{p / 1e-4:.10g}")
        lines.append(f"mean\t{self.mean_pmd:.10g}\t{self.mean_pmd / 1e-4:.10g}")
        return "\n".join(lines)


def transfer_pair(params, identity, pose):
    """Normalize in the identity frame, run the network, denormalize."""
    identity_n, center, scale = normalize_to_unit_cube(identity)
    from .mesh import apply_frame

    pose_n = apply_frame(pose, center, scale)
    out = model.forward(identity_n, pose_n, params)
    return invert_frame(out, center, scale)


def evaluate_pairs(params, triples, root):
    cache = _MeshCache(root)
    per_pair = []
    for triple in triples:
        identity, pose, gt = (cache.get(p) for p in triple)
        out = transfer_pair(params, identity, pose)
        per_pair.append(losses.pmd(out, gt))
    return per_pair


def evaluate(params, split, dataset, report_path=None):
    """Mean PMD over one split; optionally writes the per-pair report."""
    triples = {"seen": dataset.seen, "unseen": dataset.unseen, "train": dataset.train}[
        split
    ]
    if not triples:
        raise ValueError(f"split {split!r} is empty")
    per_pair = evaluate_pairs(params, triples, dataset.root)
    report = EvalReport(split, per_pair, sum(per_pair) / len(per_pair))
    if report_path:
        with open(report_path, "w", encoding="ascii") as f:
            f.write(report.format() + "\n")
    return report


def transfer(checkpoint_path, identity_obj, pose_obj, out_obj):
    """CLI-facing single transfer: checkpoint + two OBJ files in, OBJ out."""
    from .mesh import save_obj

    params = model.load_checkpoint(checkpoint_path)
    identity = load_obj(identity_obj)
    pose = load_obj(pose_obj)
    if not identity.same_topology(pose):
        raise ValueError("identity and pose meshes do not share topology")
    result = transfer_pair(params, identity, pose)
    save_obj(result, out_obj)
    return result
