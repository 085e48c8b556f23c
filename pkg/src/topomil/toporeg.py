"""Topology-preserving penalty between a bag and its latent embedding.

Both the input cloud and the latent cloud are reduced to their 0-dimensional
persistence pairings (MST edges).  The penalty compares the distances selected
by each pairing in the two spaces.  Pairings are recomputed every call but are
treated as constants by the backward pass, so the gradient only reaches the
latent distances at paired indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .persistence import DistanceMatrix, PersistencePairing, euclidean_distance_matrix, vr_persistence_0d

__all__ = ["TopoLossBreakdown", "InputTopology", "input_topology", "topo_loss"]

#: added under the square root in the derivative of latent distances
DIST_GRAD_EPS = 1e-12


@dataclass(frozen=True)
class TopoLossBreakdown:
    forward: float  # input pairing evaluated in both spaces
    reverse: float  # latent pairing evaluated in both spaces

    @property
    def total(self) -> float:
        return self.forward + self.reverse


@dataclass(frozen=True)
class InputTopology:
    """Distances and pairing of a fixed input bag; reusable across epochs."""

    distances: DistanceMatrix
    pairing: PersistencePairing


def input_topology(instances) -> InputTopology:
    dist = euclidean_distance_matrix(instances)
    return InputTopology(dist, vr_persistence_0d(dist))


def _half_sq_norm(diff: Node) -> Node:
    return ad.scale(ad.reduce_sum(ad.square(diff)), 0.5)


def topo_loss(x, z: Node, *, cached: InputTopology | None = None) -> tuple[Node, TopoLossBreakdown]:
    """Topological regularisation loss of latent ``z`` against input ``x``.

    ``x`` is an ``(n, d)`` array (or ``None`` when ``cached`` is given) and
    ``z`` an ``(n, k)`` node.
    """
    top = cached if cached is not None else input_topology(x)
    ax = top.distances.entries
    n = ax.shape[0]
    if z.ndim != 2 or z.shape[0] != n:
        raise ValueError(f"input bag has {n} instances but latent has shape {z.shape}")

    az = ad.sqrt(ad.pairwise_sq_dist(z), grad_eps=DIST_GRAD_EPS)
    pi_x = top.pairing.edges
    pi_z = vr_persistence_0d(az.data).edges

    fwd = _half_sq_norm(ad.sub(Node(ax[pi_x[:, 0], pi_x[:, 1]]), ad.gather_entries(az, pi_x)))
    rev = _half_sq_norm(ad.sub(ad.gather_entries(az, pi_z), Node(ax[pi_z[:, 0], pi_z[:, 1]])))
    return ad.add(fwd, rev), TopoLossBreakdown(fwd.item(), rev.item())
