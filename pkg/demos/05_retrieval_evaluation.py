"""
Retrieval with the camera-shared feature
========================================

At test time the heads are dropped. Probe and gallery images are compared by
Euclidean distance on ``v``; gallery images of the same person from the
probe's own camera are ignored.
"""

import numpy as np

from mtml_reid.evaluation import cmc, distance_matrix, mean_average_precision

# Four probes, six gallery images, written out by hand.
gallery_ids, gallery_cams = np.array([0, 0, 1, 1, 2, 3]), np.array([1, 2, 1, 2, 1, 2])
probe_ids, probe_cams = np.array([0, 1, 2, 0]), np.array([1, 2, 2, 3])
dist = np.array([[0.1, 0.5, 0.2, 0.3, 0.4, 0.6],
                 [0.3, 0.2, 0.1, 0.9, 0.1, 0.5],
                 [0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
                 [0.5, 0.1, 0.2, 0.3, 0.05, 0.6]])

print("CMC", cmc(dist, probe_ids, probe_cams, gallery_ids, gallery_cams, ranks=(1, 2, 3, 4)))
print("mAP", mean_average_precision(dist, probe_ids, probe_cams, gallery_ids, gallery_cams))

###############################################################################
# Distances come from explicit differences, so identical rows give exactly zero.
x = np.random.default_rng(0).normal(size=(3, 4))
print(distance_matrix(x, x).round(3))
