"""
Connected components of a point cloud
=====================================

Grow a ball around every point and watch components merge.  Each merge is
one point of the 0-dimensional persistence diagram, and the merging edges
form a minimum spanning tree.
"""

import numpy as np

from topomil.persistence import (
    diagram_from_pairing,
    diagram_to_csv,
    euclidean_distance_matrix,
    vr_persistence_0d,
)

# three points on a line: 0, 1 and 3
line = np.array([[0.0], [1.0], [3.0]])
dist = euclidean_distance_matrix(line)
pairing = vr_persistence_0d(dist)
print(diagram_to_csv(pairing, diagram_from_pairing(dist, pairing)))

###############################################################################
# Two well separated clusters give many short deaths and one long one.

rng = np.random.default_rng(0)
cloud = np.vstack([rng.normal(0, 0.1, (20, 2)), rng.normal(5, 0.1, (20, 2))])
dist = euclidean_distance_matrix(cloud)
deaths = vr_persistence_0d(dist).deaths
print("shortest deaths", np.round(deaths[:3], 3))
print("longest death  ", round(float(deaths[-1]), 3))

###############################################################################
# Scaling the cloud scales every death; the pairing itself does not move.

scaled = vr_persistence_0d(euclidean_distance_matrix(3 * cloud))
print("same edges after scaling:", np.array_equal(scaled.edges, vr_persistence_0d(dist).edges))
