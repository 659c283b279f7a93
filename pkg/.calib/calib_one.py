import time, numpy as np, torch
from dlic import codec, datasets
from dlic.adapt import AdaptationConfig, latent_only_config
from dlic.codec import analyze, quantize_latent, latent_rate, pad_to_multiple
from dlic.adapt import refine_latent, adapt_decoder, decode_with_updates
from dlic.container import pack
from dlic.evaluate import _crop_psnr, _zero_gates
from dlic.metrics import psnr

t0 = time.perf_counter()
train = datasets.natural_like(24, size=128, seed=7)
print(f"train set: {time.perf_counter()-t0:.1f}s")

t0 = time.perf_counter()
model = codec.train_base(train, lmbda=0.01, steps=1500, seed=0)
model_time = time.perf_counter() - t0
print(f"train 1500 steps: {model_time:.1f}s")
codec.save_checkpoint(model, "/root/pkg/.calib/m_001.pt")

ood = datasets.pixel_art(2, size=64, seed=11) + datasets.vector_art(2, size=64, seed=12)
nat = datasets.natural_like(2, size=64, seed=99)

cfg = AdaptationConfig(latent_steps=200, decoder_steps=200, warmup_steps=20, rank=2, seed=0)

for tag, imgs in [("nat", nat), ("ood", ood)]:
    for i, img in enumerate(imgs):
        padded = pad_to_multiple(img, model.downsample)
        npix = img.height * img.width
        size = (img.height, img.width)
        base = quantize_latent(analyze(padded, model))
        blob_b = pack(model, base, [], _zero_gates(model), size, "low_rank", cfg.prior)
        q_b = _crop_psnr(img, decode_with_updates(model, base, [], cfg.prior))
        t0 = time.perf_counter()
        refined = refine_latent(padded, model, cfg)
        t_ref = time.perf_counter() - t0
        blob_l = pack(model, refined, [], _zero_gates(model), size, "low_rank", cfg.prior)
        q_l = _crop_psnr(img, decode_with_updates(model, refined, [], cfg.prior))
        t0 = time.perf_counter()
        res = adapt_decoder(padded, model, refined, cfg)
        t_ad = time.perf_counter() - t0
        blob_a = pack(model, refined, res.updates, res.gate_bits, size, "low_rank", cfg.prior)
        q_a = _crop_psnr(img, decode_with_updates(model, refined, res.updates, cfg.prior))
        print(f"{tag}{i}: base {len(blob_b)*8/npix:.4f}bpp {q_b:.2f}dB | "
              f"lat {len(blob_l)*8/npix:.4f}bpp {q_l:.2f}dB ({t_ref:.1f}s) | "
              f"adapt {len(blob_a)*8/npix:.4f}bpp {q_a:.2f}dB ({t_ad:.1f}s) gates={list(res.gate_bits.bits)}")
