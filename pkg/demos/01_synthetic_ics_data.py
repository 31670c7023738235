"""
Intra-camera supervised data
============================

Each camera labels its own people 0..N_p-1. The same index in two cameras
is, in general, two different people; the hidden global id is kept only so
we can score things later.
"""

import numpy as np

from mtml_reid.datagen import SynthConfig, generate_synthetic, sample_batch, split_identities

# Twelve people, three cameras. Each camera sees a person with probability 0.7.
cfg = SynthConfig(num_global_identities=12, num_cameras=3, feature_dim=8,
                  images_per_identity_per_camera=4, camera_presence_probability=0.7, seed=3)
ds = generate_synthetic(cfg)

for view in ds.cameras:
    print(f"camera {view.camera_id}: {view.num_identities} identities, {len(view)} images")

###############################################################################
# Local label 0 in camera 1 and local label 0 in camera 2 are usually different people.
gt = ds.ground_truth
print("label 0 per camera ->", [gt[(p, 0)] for p in range(1, 4)])

###############################################################################
# Training batches hold P identities x K images from every camera.
batch = sample_batch(ds, np.random.default_rng(0), persons_per_camera=2, images_per_person=4)
print("batch size", batch.size, "per camera", batch.per_camera_counts)

###############################################################################
# Held-out identities for retrieval evaluation never appear in training.
train, test = split_identities(ds, test_fraction=0.5, seed=0)
seen = {g for g in train.ground_truth.values()}
unseen = {g for g in test.ground_truth.values()}
print("train ids", sorted(seen), "test ids", sorted(unseen))
assert not seen & unseen
