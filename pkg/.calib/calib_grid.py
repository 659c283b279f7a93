import time, numpy as np
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig
from dlic.evaluate import rd_methods, fixed_vs_dynamic, METHOD_BASE, METHOD_LATENT, METHOD_ADAPTED

LAMBDAS = (0.003, 0.01, 0.03, 0.1)
train = datasets.natural_like(24, size=128, seed=7)
models = []
t0 = time.perf_counter()
for lam in LAMBDAS:
    m = codec.train_base(train, lmbda=lam, steps=1500, seed=0)
    codec.save_checkpoint(m, f"/root/pkg/.calib/m_{lam}.pt")
    models.append(m)
print(f"trained 4 models: {time.perf_counter()-t0:.1f}s")

ood = datasets.pixel_art(16, size=64, seed=11) + datasets.vector_art(16, size=64, seed=12)
cfg = AdaptationConfig(latent_steps=200, decoder_steps=200, warmup_steps=20, rank=2, seed=0)

t0 = time.perf_counter()
report = rd_methods(ood, models, cfg)
wall = time.perf_counter() - t0
print(f"rd_methods 32 imgs x 4 lmbda: {wall:.1f}s")
for m in report.methods():
    c = report.curve(m)
    pts = " ".join(f"({p.bpp:.3f},{p.psnr_db:.2f})" for p in c.points)
    print(f"  {m}: {pts}")
print(f"  BD adapted vs latent: {report.bd(METHOD_ADAPTED, METHOD_LATENT):+.2f}%")
print(f"  BD latent  vs base  : {report.bd(METHOD_LATENT, METHOD_BASE):+.2f}%")
print(f"  BD adapted vs base  : {report.bd(METHOD_ADAPTED, METHOD_BASE):+.2f}%")
print(f"  gate freq: {report.gate_frequency()}")
# measured vs estimated slack check (criterion: measured <= estimated*1.01 + 64*8)
worst = 0.0
for p in report.points:
    if p.method == METHOD_ADAPTED:
        slack = p.bits - (p.estimated_bits * 1.01 + 512)
        worst = max(worst, slack)
print(f"  worst measured-vs-estimated slack overrun: {worst:.1f} bits (<=0 ok)")
