"""Training objectives and the evaluation metric.

All loss functions take V x 3 coordinate tensors and build their value
from autodiff primitives, so gradients come for free. The geodesic
contrast term compares ring-edge vectors of prediction and ground truth
vertex by vertex; evaluating the per-edge vector difference in global
axes is algebraically identical to the law-of-cosines form.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mesh import directed_ring_edges

# Backward-rule radicand floor; pred == gt is reachable and must not
# produce NaN gradients from the norm's square root.
SQRT_GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_edge: float = 0.0005
    lambda_contra: float = 0.0005

    def __post_init__(self):
        for name in ("lambda_rec", "lambda_edge", "lambda_contra"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def reconstruction_loss(pred, gt):
    """Mean over vertices of squared Euclidean distance to ground truth.

    Shares its normalization with the evaluation metric, so the detached
    value equals ``pmd`` on the same coordinates.
    """
    if pred.shape != gt.shape:
        raise ad.DimensionError(
            f"reconstruction_loss: shapes {pred.shape} and {gt.shape} differ"
        )
    v = pred.shape[0]
    d = ad.subtract(pred, gt)
    return ad.scale(ad.sum_all(ad.multiply(d, d)), 1.0 / v)


def _row_norms(x):
    return ad.sqrt(ad.sum_rows(ad.multiply(x, x)), grad_floor=SQRT_GRAD_FLOOR)


def edge_loss(pred, gt, edges):
    """Mean squared difference of corresponding edge lengths."""
    edges = np.asarray(edges, dtype=np.int64)
    if edges.ndim != 2 or edges.shape[1] != 2 or edges.shape[0] == 0:
        raise ValueError(f"edge_loss needs a non-empty Ex2 edge set, got {edges.shape}")
    pred_len = _row_norms(
        ad.subtract(ad.gather_rows(pred, edges[:, 0]), ad.gather_rows(pred, edges[:, 1]))
    )
    gt_len = _row_norms(
        ad.subtract(ad.gather_rows(gt, edges[:, 0]), ad.gather_rows(gt, edges[:, 1]))
    )
    d = ad.subtract(pred_len, gt_len)
    return ad.scale(ad.sum_all(ad.multiply(d, d)), 1.0 / edges.shape[0])


def _cgc_from_directed(pred, gt, src, dst, v):
    pred_vec = ad.subtract(ad.gather_rows(pred, dst), ad.gather_rows(pred, src))
    gt_vec = ad.subtract(ad.gather_rows(gt, dst), ad.gather_rows(gt, src))
    diff = ad.subtract(pred_vec, gt_vec)
    return ad.scale(ad.sum_all(_row_norms(diff)), 1.0 / v)


def cgc_loss(pred, gt, rings):
    """Per-vertex sum of ring-edge vector differences, divided by V.

    Every directed edge appears once per endpoint ring, so each
    undirected edge contributes from both ends.
    """
    if pred.shape != gt.shape:
        raise ad.DimensionError(
            f"cgc_loss: shapes {pred.shape} and {gt.shape} differ"
        )
    v = pred.shape[0]
    if len(rings) != v:
        raise ValueError(f"cgc_loss: {len(rings)} rings for {v} vertices")
    src, dst = directed_ring_edges(rings)
    return _cgc_from_directed(pred, gt, src, dst, v)


def full_loss(pred, gt, edges, rings, weights):
    """Weighted sum of reconstruction, edge and geodesic-contrast terms."""
    total = ad.scale(reconstruction_loss(pred, gt), weights.lambda_rec)
    total = ad.add(total, ad.scale(edge_loss(pred, gt, edges), weights.lambda_edge))
    total = ad.add(total, ad.scale(cgc_loss(pred, gt, rings), weights.lambda_contra))
    return total


def pmd(pred, gt):
    """Point-wise mesh Euclidean distance: mean squared vertex displacement.

    Pure evaluation on Mesh values, no gradient. Reported tables use
    multiples of 1e-4 of this number.
    """
    if pred.vertex_count != gt.vertex_count:
        raise ValueError(
            f"pmd: vertex counts differ ({pred.vertex_count} vs {gt.vertex_count})"
        )
    d = gt.vertices - pred.vertices
    return float((d * d).sum() / pred.vertex_count)
