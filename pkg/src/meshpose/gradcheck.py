"""Finite-difference verification of analytic gradients.

Everything here runs in double precision: central differences with step
1e-5 are unreliable in float32. The suites cover each differentiable
operation on small random shapes, the loss functions, and the composed
network-plus-loss graph on a tiny configuration. Operations are looked up
through the module namespace at call time so a deliberately broken rule
can be injected when testing the checker itself.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_difference(f, tensors, step=FD_STEP):
    """Central-difference gradients of scalar ``f()`` w.r.t. each tensor.

    Perturbs tensor storage in place and restores it; ``f`` must re-read
    the tensors on every call and return a python float.
    """
    grads = []
    for t in tensors:
        flat = t.data.ravel()
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(t.data.shape))
    return grads


def max_rel_error(analytic, numeric, floor=1e-4):
    """Worst elementwise |a-n| / max(|a|, |n|, floor) over a gradient pair."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def check_scalar_graph(build, leaves, step=FD_STEP):
    """Compare tape gradients of ``build()`` against finite differences.

    ``build`` evaluates the graph from the current leaf values and returns
    the scalar loss tensor. Returns the worst relative error over all
    leaves.
    """
    tape = ad.Tape()
    with tape:
        loss = build()
    ad.zero_grads(leaves)
    ad.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]
    numeric = finite_difference(lambda: build().item(), leaves, step=step)
    return max(
        max_rel_error(a, n) for a, n in zip(analytic, numeric)
    )


def _away_from_zero(arr, margin=5e-3):
    """Push entries out of the relu kink neighbourhood, keeping their sign."""
    out = arr.copy()
    small = np.abs(out) < margin
    out[small] = np.where(out[small] >= 0, margin, -margin)
    return out


def _rand(rng, *shape):
    return ad.Tensor(rng.uniform(-1.0, 1.0, shape))


def op_suite(seed=0):
    """Worst relative FD error for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    results = {}

    x = _rand(rng, 3, 5)
    w = _rand(rng, 4, 3)
    b = _rand(rng, 4)
    results["per_vertex_linear"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.per_vertex_linear(x, w, b), y)),
        [x, w, b],
    )

    x = _rand(rng, 4, 6)
    results["instance_norm"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.instance_norm(x), y)), [x]
    )

    s = _rand(rng, 3, 4)
    t = _rand(rng, 3, 4)
    results["softmax_over_keys"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(ad.softmax_over_keys(s), t)), [s]
    )

    a = _rand(rng, 3, 4)
    bb = _rand(rng, 4, 2)
    results["batched_matmul"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.batched_matmul(a, bb), y)), [a, bb]
    )

    xr = ad.Tensor(_away_from_zero(rng.uniform(-1.0, 1.0, (4, 5))))
    results["activation_relu"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.activation(xr, "relu"), y)), [xr]
    )

    xt = _rand(rng, 4, 5)
    results["activation_tanh"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.activation(xt, "tanh"), y)), [xt]
    )

    att = _rand(rng, 3, 4)
    gamma = ad.Tensor(rng.uniform(0.2, 0.8))
    res = _rand(rng, 3, 4)
    results["scale_and_add"] = check_scalar_graph(
        lambda: ad.sum_all(
            ad.multiply(y := ad.scale_and_add(att, gamma, res), y)
        ),
        [att, gamma, res],
    )

    # Continuous draws make exact window ties improbable; seed is fixed.
    xm = _rand(rng, 3, 8)
    results["max_over_vertices"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.max_over_vertices(xm, 4), y)), [xm]
    )

    xs = ad.Tensor(rng.uniform(0.1, 1.0, (6,)))
    results["sqrt"] = check_scalar_graph(
        lambda: ad.sum_all(ad.sqrt(xs, grad_floor=1e-12)), [xs]
    )

    p = _rand(rng, 5, 3)
    idx = np.array([0, 2, 2, 4, 1])
    results["gather_rows"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.gather_rows(p, idx), y)), [p]
    )

    u = _rand(rng, 4, 3)
    v = _rand(rng, 4, 3)
    results["add"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.add(u, v), y)), [u, v]
    )
    results["subtract"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.subtract(u, v), y)), [u, v]
    )
    results["multiply"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(u, v)), [u, v]
    )
    results["sum_rows"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.sum_rows(u), y)), [u]
    )
    results["transpose"] = check_scalar_graph(
        lambda: ad.sum_all(ad.multiply(y := ad.transpose(u), y)), [u]
    )
    return results


def loss_suite(seed=0):
    """FD checks of the three training losses on a small random mesh pair."""
    from . import losses
    from .mesh import Mesh, edge_list, vertex_rings
    from .testmeshes import grid_mesh

    rng = np.random.default_rng(seed)
    base = grid_mesh(3, 4)
    v = base.vertex_count
    pred = ad.Tensor(rng.uniform(-1.0, 1.0, (v, 3)))
    gt = ad.Tensor(rng.uniform(-1.0, 1.0, (v, 3)))
    edges = edge_list(base)
    rings = vertex_rings(base)

    return {
        "reconstruction_loss": check_scalar_graph(
            lambda: losses.reconstruction_loss(pred, gt), [pred]
        ),
        "edge_loss": check_scalar_graph(
            lambda: losses.edge_loss(pred, gt, edges), [pred]
        ),
        "cgc_loss": check_scalar_graph(
            lambda: losses.cgc_loss(pred, gt, rings), [pred]
        ),
        "full_loss": check_scalar_graph(
            lambda: losses.full_loss(pred, gt, edges, rings, losses.LossWeights()),
            [pred],
        ),
    }


def model_suite(seed=0):
    """FD check of the composed forward + full-objective graph.

    Uses a tiny configuration (channels <= 8, 12 vertices) so sweeping
    every parameter stays fast.
    """
    from . import losses, model
    from .mesh import edge_list, vertex_rings
    from .testmeshes import grid_mesh

    rng = np.random.default_rng(seed)
    cfg = model.ModelConfig(
        encoder_channels=(3, 4, 4, 8),
        decoder_channels=(8, 4),
        num_decoders=2,
    )
    params = model.init_params(cfg, seed=seed, dtype=np.float64)
    identity = grid_mesh(3, 4, jitter=0.3, seed=seed)
    pose = grid_mesh(3, 4, jitter=0.3, seed=seed + 1)
    v = identity.vertex_count
    gt = ad.Tensor(rng.uniform(-0.9, 0.9, (v, 3)))
    edges = edge_list(identity)
    rings = vertex_rings(identity)
    weights = losses.LossWeights()
    leaves = [t for _, t in model.named_parameters(params)]

    def build():
        pred = model.forward_vertices(identity, pose, params)
        return losses.full_loss(pred, gt, edges, rings, weights)

    worst = 0.0
    for name, tensor in model.named_parameters(params):
        err = check_scalar_graph(build, [tensor])
        worst = max(worst, err)
    ad.zero_grads(leaves)
    return {"forward_full_loss": worst}


@dataclass
class GradcheckReport:
    """Per-operation worst relative errors plus the pass/fail verdict."""

    tolerance: float = REL_TOL
    errors: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors.values())

    def failures(self):
        return {k: e for k, e in self.errors.items() if e >= self.tolerance}

    def format(self):
        lines = []
        for name in sorted(self.errors):
            err = self.errors[name]
            verdict = "pass" if err < self.tolerance else "FAIL"
            lines.append(f"{name}\t{err:.3e}\t{verdict}")
        lines.append(f"overall\t{'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def run_gradcheck(seed=0, include_model=True):
    """Run all suites and collect a deterministic report."""
    report = GradcheckReport()
    report.errors.update(op_suite(seed=seed))
    report.errors.update(loss_suite(seed=seed))
    if include_model:
        report.errors.update(model_suite(seed=seed))
    return report
