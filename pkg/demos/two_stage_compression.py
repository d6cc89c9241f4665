"""
Two-stage compression of one grid
=================================

Stage one merges neighbouring tokens that point the same way. Stage two keeps
the pooled tokens the CLS query attends to most.
"""

import numpy as np

from tge.affinity import AffinityConfig, cluster_grid, neighbor_affinity
from tge.anchored import SelectionConfig, compress_grid, compress_image
from tge.encoder import EncoderParams, encode
from tge.fixtures import two_region_pixels
from tge.token_model import GridLayout

layout = GridLayout(336, 336)
pixels = two_region_pixels(seed=7)  # calm water on the left, cluttered land on the right
out = encode(pixels, EncoderParams(), layout)
grid = out.patch_grid()
print("token grid:", grid.data.shape)

# affinities of one water token to its eight neighbours
q = neighbor_affinity(grid, (12, 3), AffinityConfig())
print("affinities around (12, 3):", ", ".join(f"{v:.3f}" for _, v in q))

for threshold in (0.99, 0.95, 0.9, 0.8):
    clusters = cluster_grid(grid, AffinityConfig(join_threshold=threshold))
    print(f"join threshold {threshold}: {clusters.cluster_count} clusters")

retained, report = compress_grid(grid, out, AffinityConfig(join_threshold=0.9), SelectionConfig(1.0, 24))
sizes = np.array(report.cluster_sizes)
print(f"\n{report.pooled_token_count} pooled tokens, largest cluster {sizes.max()} tokens")
print(f"kept {len(retained)}; top sources {retained.source_indices[:6]}")
cols = np.array(retained.source_indices) % 24
print(f"{(cols >= 12).sum()} of the kept tokens start in the land half")

# whole image, grid by grid
image = np.hstack([two_region_pixels(s) for s in range(4)])
_, rep = compress_image(image, GridLayout(1344, 336), EncoderParams(), AffinityConfig(), SelectionConfig(1.0, 24))
print(f"\n4-grid image: {rep.original_token_count} -> {rep.retained_token_count} tokens "
      f"(ratio {float(rep.compression_ratio):.0f}), {rep.estimated_tflops:.2f} TFLOPs by the fit")
