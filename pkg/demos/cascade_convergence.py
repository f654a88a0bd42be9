"""
How fast the cascade converges
==============================

Landmark error, yaw error and occlusion recall are tracked stage by stage on
held-out faces.  Most of the gain arrives in the first two stages.
"""

from dataclasses import replace

import numpy as np

from jointface import GenConfig, TrainConfig, generate, make_shape_family, predict_batch, train
from jointface.cli import evaluate_snapshot
from jointface.synth import eye_indices

cfg = GenConfig(seed=7, n_samples=200, occlusion_mode="random", occlusion_rate=0.2)
shapes, family = make_shape_family(cfg)
train_set = generate(cfg, family)
test_set = generate(replace(cfg, seed=8, n_samples=60), family)

model = train(train_set, TrainConfig(n_stages=4, seed=0), shapes3d=shapes)

# %%
# ``return_history`` keeps the state after every stage, starting from the
# mean-face initialization.
_, history = predict_batch(model, [s.face_box for s in test_set], [s.image for s in test_set],
                           return_history=True)
eyes = eye_indices(cfg.n_points)
print("stage  landmark error (% eye dist)  yaw MAE (deg)  occlusion recall@p80")
for t, snap in enumerate(history):
    r = evaluate_snapshot(snap["x"], snap["c"], snap["h"], test_set, eyes)
    recall = r["occlusion_recall_at_p80"]
    recall = "n/a" if recall is None else f"{recall:.2f}"
    print(f"{t:5d}  {r['mean_normalized_error']:27.2f}  {r['pose'].mae_deg[1]:13.2f}  {recall:>20}")
