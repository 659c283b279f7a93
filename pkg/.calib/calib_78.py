import time
import numpy as np
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig
from dlic.evaluate import fixed_vs_dynamic, sweep_steps

LAMBDAS = (0.003, 0.01, 0.03, 0.1)
models = [codec.load_checkpoint(f"/root/pkg/.calib/f48_{lam}.pt") for lam in LAMBDAS]
ood = datasets.pixel_art(16, size=64, seed=11) + datasets.vector_art(16, size=64, seed=12)
cfg = AdaptationConfig(latent_steps=200, decoder_steps=200, warmup_steps=20, rank=2, seed=0)

t0 = time.perf_counter()
bd = fixed_vs_dynamic(ood, models, cfg, layer_counts=(1, 2, 4))
print(f"fixed_vs_dynamic: {time.perf_counter()-t0:.1f}s")
for label, val in bd.items():
    print(f"  {label}: {val:+.3f}%")
best_fixed = min(v for k, v in bd.items() if k.startswith("fixed_"))
print(f"  dynamic - best_fixed = {bd['dynamic'] - best_fixed:+.3f} (<= 2.0 needed)", flush=True)

t0 = time.perf_counter()
rows = sweep_steps(ood, models, cfg, totals=(0, 50, 200))
print(f"sweep_steps: {time.perf_counter()-t0:.1f}s")
for r in rows:
    print(f"  total={r.total_steps}: wall={r.wall_seconds:.1f}s bd={r.bd_pct:+.3f}%")
