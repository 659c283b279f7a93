import time
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig
from dlic.codec import analyze, quantize_latent, pad_to_multiple
from dlic.adapt import decode_with_updates
from dlic.evaluate import _crop_psnr, _zero_gates

train = datasets.natural_like(24, size=128, seed=7)
nat = datasets.natural_like(4, size=64, seed=99)
cfg = AdaptationConfig()

for hidden, steps in [(48, 3000)]:
    for lam in (0.003, 0.01, 0.03, 0.1):
        t0 = time.perf_counter()
        m = codec.train_base(train, lmbda=lam, steps=steps, seed=0,
                             hidden_channels=hidden)
        wall = time.perf_counter() - t0
        bpps, qs = [], []
        for img in nat:
            padded = pad_to_multiple(img, m.downsample)
            lat = quantize_latent(analyze(padded, m))
            from dlic.codec import latent_rate
            bpps.append(latent_rate(lat, m) / (img.height * img.width))
            qs.append(_crop_psnr(img, decode_with_updates(m, lat, [], cfg.prior)))
        print(f"hidden={hidden} steps={steps} lam={lam}: "
              f"{sum(bpps)/4:.3f}bpp {sum(qs)/4:.2f}dB  ({wall:.0f}s)")
        codec.save_checkpoint(m, f"/root/pkg/.calib/h{hidden}_{lam}.pt")
