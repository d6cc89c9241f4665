"""
Picking training samples by gradient similarity
===============================================

A short warm-up, one projected gradient per sample, then keep the 70% of
training samples whose gradients best match some validation gradient.
"""

import numpy as np

from tge.encoder import AdapterModel
from tge.fixtures import sample_sets
from tge.influence import build_sketch, rank_and_select, warmup_and_featurize

train, validation = sample_sets(seed=1)
# plant a copy of a validation sample in the training set
train.append(("planted", validation[0][1].copy(), validation[0][2]))
model = AdapterModel.random(in_dim=8, rank=1, out_classes=2, seed=0)

train_f, val_f = warmup_and_featurize(model, train, validation, warmup_steps=10, lr=0.1,
                                      sketch_seed=0, d_out=1024)
ranking, selected = rank_and_select(train_f, val_f, keep_fraction=0.7)
print(f"{len(selected)} of {len(train)} training samples kept")
for sid, score in ranking.entries[:3]:
    print(f"  {sid:10s} {score:.6f}")
print("  ...")
for sid, score in ranking.entries[-3:]:
    print(f"  {sid:10s} {score:.6f}")

# the sign sketch roughly preserves angles
rng = np.random.default_rng(0)
sketch = build_sketch(2000, 256, seed=0).matrix
u, v = rng.normal(size=(2, 2000))
cos = u @ v / np.linalg.norm(u) / np.linalg.norm(v)
pu, pv = sketch @ u, sketch @ v
print(f"\ncosine before {cos:+.4f}, after projection {pu @ pv / np.linalg.norm(pu) / np.linalg.norm(pv):+.4f}")
