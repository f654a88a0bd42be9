"""
Quickstart: generate faces, train a cascade, read off landmarks and pose
=======================================================================

A small seeded dataset is generated, a three-stage cascade is trained on it,
and the model is applied to a few unseen faces.
"""

from dataclasses import replace

import numpy as np

from jointface import GenConfig, TrainConfig, generate, make_shape_family, predict, train
from jointface.metrics import normalized_error, pose_metrics
from jointface.synth import eye_indices

# %%
# Synthetic faces come from a procedurally generated 3D shape family.  The
# same family supplies the 3D training shapes for the deformable model.
cfg = GenConfig(seed=1, n_samples=150, occlusion_mode="random", occlusion_rate=0.2)
shapes, family = make_shape_family(cfg)
train_set = generate(cfg, family)
test_set = generate(replace(cfg, seed=2, n_samples=5), family)
print(f"{len(train_set)} training faces, {cfg.n_points} landmarks, {family.n_modes} shape modes")

# %%
# Training reads only landmarks, visibility labels and annotation masks.
model = train(train_set, TrainConfig(n_stages=3, seed=0), shapes3d=shapes)
print("training error per stage (px):", np.round(model.train_errors, 2))

# %%
# Prediction needs only the image and a face box.
left, right = eye_indices(cfg.n_points)
for s in test_set:
    st = predict(model, s.image, s.face_box)
    err = normalized_error(st.x, s.x_true, s.mask, left, right)
    print(f"face {s.index}: error {err:5.2f}% of eye distance, "
          f"yaw {np.degrees(st.h[1]):6.1f} deg (truth {np.degrees(s.h_true[1]):6.1f}), "
          f"{int((st.c < 0.5).sum())} points flagged occluded (truth {int((s.c_true == 0).sum())})")

# %%
# Pose summary over the test faces.
h_pred = np.stack([predict(model, s.image, s.face_box).h for s in test_set])
m = pose_metrics(h_pred, np.stack([s.h_true for s in test_set]))
print("pose MAE (pitch, yaw, roll) deg:", np.round(m.mae_deg, 2))
