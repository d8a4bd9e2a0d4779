"""Token shapes through the transformer fusion module.

Frame and event feature maps are cut into patches, embedded, mixed by
self- and cross-attention over several shared iterations, and decoded back
to a feature map. Uses the full-width setting (p=4, 512-d tokens).
"""
import time

import numpy as np

from spikefuse import fusion as fu
from spikefuse.numerics import ParameterStore, Tensor

cfg = fu.FusionConfig(p=4, d_dim=512, heads=2, blocks=2)
store = ParameterStore(0)
fu.init_level_params(store, cfg, "tff", 256, 256, (16, 16))
print(f"fusion parameters: {sum(t.data.size for _, t in store.items()):,}")

rng = np.random.default_rng(0)
frame = rng.normal(size=(256, 16, 16))
event = rng.normal(size=(256, 16, 16))

t0 = time.perf_counter()
f = fu.embed_patches(frame, cfg, store.scoped("embed_frame"), source="frame")
g = fu.embed_patches(event, cfg, store.scoped("embed_event"), source="event")
t = fu.tmff_fuse(f, g, cfg, store.scoped("tmff"))
out = fu.decode_embeddings(t, 16, 16, cfg, store.scoped("decoder"))
print(f"frame features   {frame.shape}")
print(f"frame tokens     {f.rows.shape}")
print(f"event tokens     {g.rows.shape}")
print(f"fused tokens     {t.rows.shape}")
print(f"decoded map      {out.shape}")
print(f"forward pass     {time.perf_counter() - t0:.2f}s")

# attention over identical keys/values just returns that row
d = rng.normal(size=8)
same = fu.cross_attention(Tensor(rng.normal(size=(3, 8))), Tensor(np.tile(d, (6, 1))))
print(f"\nconstant-key cross-attention error: {np.abs(same.data - d).max():.1e}")
