import time
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig, decode_with_updates
from dlic.codec import analyze, quantize_latent, latent_rate, pad_to_multiple
from dlic.evaluate import _crop_psnr

train = datasets.natural_like(24, size=128, seed=7)
nat = datasets.natural_like(4, size=64, seed=99)
prior = AdaptationConfig().prior

def probe(m):
    bpps, qs = [], []
    for img in nat:
        padded = pad_to_multiple(img, m.downsample)
        lat = quantize_latent(analyze(padded, m))
        bpps.append(latent_rate(lat, m) / (img.height * img.width))
        qs.append(_crop_psnr(img, decode_with_updates(m, lat, [], prior)))
    return sum(bpps) / len(bpps), sum(qs) / len(qs)

for hidden, lr, steps in [(48, 1e-3, 4000), (48, 5e-4, 8000)]:
    row = []
    t0 = time.perf_counter()
    for lam in (0.003, 0.1):
        m = codec.train_base(train, lmbda=lam, steps=steps, seed=0,
                             hidden_channels=hidden, lr=lr)
        row.append((lam,) + probe(m))
    wall = time.perf_counter() - t0
    spread = row[1][2] - row[0][2]
    print(f"hidden={hidden} lr={lr} steps={steps}: "
          + " | ".join(f"lam={r[0]}: {r[1]:.3f}bpp {r[2]:.2f}dB" for r in row)
          + f"  spread={spread:+.2f}dB  ({wall:.0f}s both)")
