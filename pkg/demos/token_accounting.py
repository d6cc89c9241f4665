"""
Token accounting for an 8064 x 8064 image
=========================================

How many visual tokens reach the language model at each per-grid budget,
and what the linear FLOPs fit predicts for them.
"""

from tge.token_model import (
    PUBLISHED_FLOPS_ROWS,
    GridLayout,
    display_visual_tokens,
    estimate_flops,
    fit_flops_model,
    patch_count,
    token_budget,
)

layout = GridLayout(8064, 8064)
grids, raw, total = patch_count(layout)
print(f"{grids} grids of {raw} patch tokens, {total} tokens before compression")

# fit TFLOPs = slope * tokens + intercept on the four published rows
model = fit_flops_model(PUBLISHED_FLOPS_ROWS)
print(f"slope {model.slope_tflops_per_token:.6f} TFLOPs/token, intercept {model.intercept_tflops:.3f}")

print(f"\n{'ratio':>6} {'per grid':>9} {'tokens':>7} {'shown':>6} {'TFLOPs':>8}")
for per_grid in (24, 18, 12, 6):
    tokens = token_budget(layout, per_grid)
    print(f"{raw // per_grid:>5}x {per_grid:>9} {tokens:>7} {display_visual_tokens(tokens):>6} "
          f"{estimate_flops(model, tokens):>8.2f}")

# the displayed count includes 144 pooled tokens of the global overview view
print("\n13824 grid tokens + 144 overview tokens =", 13824 + 144, "->", display_visual_tokens(13824))
