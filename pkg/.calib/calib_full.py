import time, numpy as np
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig
from dlic.evaluate import rd_methods, METHOD_BASE, METHOD_LATENT, METHOD_ADAPTED

LAMBDAS = (0.003, 0.01, 0.03, 0.1)
train = datasets.natural_like(24, size=128, seed=7)
models = []
for lam in LAMBDAS:
    t0 = time.perf_counter()
    m = codec.train_base(train, lmbda=lam, steps=8000, seed=0,
                         hidden_channels=48, lr=5e-4)
    codec.save_checkpoint(m, f"/root/pkg/.calib/f48_{lam}.pt")
    models.append(m)
    print(f"model lam={lam}: {time.perf_counter()-t0:.0f}s", flush=True)

ood = datasets.pixel_art(16, size=64, seed=11) + datasets.vector_art(16, size=64, seed=12)
cfg = AdaptationConfig(latent_steps=200, decoder_steps=200, warmup_steps=20, rank=2, seed=0)

t0 = time.perf_counter()
report = rd_methods(ood, models, cfg)
wall = time.perf_counter() - t0
print(f"rd_methods 32x4: {wall:.1f}s")
for meth in report.methods():
    c = report.curve(meth)
    print(f"  {meth}: " + " ".join(f"({p.bpp:.3f},{p.psnr_db:.2f})" for p in c.points))
try:
    print(f"  BD adapted vs latent: {report.bd(METHOD_ADAPTED, METHOD_LATENT):+.3f}%")
except Exception as e:
    print(f"  BD adapted vs latent failed: {e}")
try:
    print(f"  BD latent vs base: {report.bd(METHOD_LATENT, METHOD_BASE):+.3f}%")
except Exception as e:
    print(f"  BD latent vs base failed: {e}")
print(f"  gate freq: {np.round(report.gate_frequency(), 3)}")
worst = -1e9
for p in report.points:
    if p.method == METHOD_ADAPTED:
        worst = max(worst, p.bits - (p.estimated_bits * 1.01 + 512))
print(f"  worst slack overrun: {worst:.1f} bits (<=0 ok)")
