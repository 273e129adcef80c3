"""Generate the two benchmark place-types, then mix one source map with one target map.

Run: python3 demos/01_generate_and_mix.py
"""

import numpy as np

from spatial_uda import MixConfig, spatial_mask_mix, spatial_mixup, subset_expand
from spatial_uda.benchmark import source_config, target_config
from spatial_uda.synthetic import generate_shifted_pair

src, tgt = generate_shifted_pair(source_config(0, n_maps_per_class=4), target_config(0, n_maps_per_class=4))
print(f"source {src.place_type_id}: {len(src)} maps, labels {np.bincount(src.labels).tolist()}")
print(f"target {tgt.place_type_id}: {len(tgt)} maps, vocabulary {src.vocabulary}")

# FPS sub-maps of 512 points are what the encoder sees
src, tgt = subset_expand(src, 512), subset_expand(tgt, 512)
a, b = src.maps[0], tgt.maps[0]

rng = np.random.default_rng(0)
mixed = spatial_mixup(a, b, MixConfig(), rng)
print(f"mix-up: lambda={mixed.lam:.3f}, {len(mixed.map)} points")

masked = spatial_mask_mix(a, b, MixConfig(), rng)
alpha, beta = masked.ratios()
print(f"mask-mix with a {masked.geometry.kind}: {masked.retained_source}/{masked.total} source points, soft label ({alpha:.3f}, {beta:.3f})")
