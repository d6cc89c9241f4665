"""
Probing the toy encoder
=======================

Logit-lens readouts across layers, register-token detection, and pruning of
background-like tokens against a small lexicon.
"""

import numpy as np

from tge.analysis import BackgroundLexicon, prune_background
from tge.encoder import EncoderParams, decode_layers, detect_register_tokens, encode
from tge.fixtures import outlier_norm_tokens, two_region_pixels
from tge.token_model import GridLayout

params = EncoderParams(dim=32, layers=3, vocab=64, seed=0)
out = encode(two_region_pixels(3), params, GridLayout(336, 336))

ids = decode_layers(out, params)  # (layers, tokens) argmax vocabulary ids
for layer, row in enumerate(ids):
    patches = row[1:].reshape(24, 24)  # index 0 is the CLS token
    water, land = patches[:, :12], patches[:, 12:]
    print(f"layer {layer}: {len(np.unique(water))} distinct ids on water, {len(np.unique(land))} on land")

grid = outlier_norm_tokens(seed=0)
print("\nregister tokens in the outlier fixture:", detect_register_tokens(grid))

# lexicon: the mean water token stands in for a 'sea' embedding
tokens = out.patch_grid().tokens.astype(np.float64)
sea = tokens.reshape(24, 24, -1)[:, :12].reshape(-1, tokens.shape[1]).mean(axis=0)
retained, dropped = prune_background(out.patch_grid(), BackgroundLexicon(("sea",), sea[None, :]), 0.5)
share = np.mean(np.array(dropped) % 24 < 12)
print(f"dropped {len(dropped)} tokens, {share:.0%} of them on the water half")
