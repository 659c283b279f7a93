import time
import numpy as np
from dlic import codec, datasets, instrumentation, onestep
from dlic.adapt import AdaptationConfig, decode_with_updates
from dlic.codec import analyze, quantize_latent, pad_to_multiple
from dlic.container import pack
from dlic.evaluate import _crop_psnr, _zero_gates
from dlic.metrics import curve_from_points, bd_rate

LAMBDAS = (0.003, 0.01, 0.03, 0.1)
models = [codec.load_checkpoint(f"/root/pkg/.calib/f48_{lam}.pt") for lam in LAMBDAS]
corpus = datasets.pixel_art(32, size=64, seed=31) + datasets.vector_art(32, size=64, seed=32)
held = datasets.pixel_art(16, size=64, seed=11) + datasets.vector_art(16, size=64, seed=12)
prior = AdaptationConfig().prior

t0 = time.perf_counter()
banks = []
for m in models:
    banks.append(onestep.build_bank(corpus, m, clusters=8, rank=2, steps=200, seed=0))
print(f"bank build x4: {time.perf_counter()-t0:.1f}s", flush=True)

t0 = time.perf_counter()
base_pts, one_pts = [], []
for m, bank in zip(models, banks):
    bb, bq, ob, oq, dists = [], [], [], [], []
    for img in held:
        padded = pad_to_multiple(img, m.downsample)
        npix = img.height * img.width
        lat = quantize_latent(analyze(padded, m))
        blob = pack(m, lat, [], _zero_gates(m), (img.height, img.width), "low_rank", prior)
        bb.append(len(blob) * 8 / npix)
        bq.append(_crop_psnr(img, decode_with_updates(m, lat, [], prior)))
        blob2, rep = onestep.onestep_encode(img, m, bank)
        ob.append(len(blob2) * 8 / npix)
        oq.append(rep["psnr_db"])
        dists.append(rep["cluster"])
        assert rep["gradient_steps"] == 0
    base_pts.append((float(np.mean(bb)), float(np.mean(bq))))
    one_pts.append((float(np.mean(ob)), float(np.mean(oq))))
    print(f"lam={m.lmbda}: base {base_pts[-1][0]:.3f}bpp {base_pts[-1][1]:.2f}dB | "
          f"onestep {one_pts[-1][0]:.3f}bpp {one_pts[-1][1]:.2f}dB | clusters {sorted(set(dists))}", flush=True)
print(f"encode x held-out: {time.perf_counter()-t0:.1f}s")
anchor = curve_from_points("base", [b for b, _ in base_pts], [q for _, q in base_pts])
test = curve_from_points("onestep", [b for b, _ in one_pts], [q for _, q in one_pts])
try:
    print(f"BD onestep vs base: {bd_rate(anchor, test):+.3f}%")
except Exception as e:
    print(f"BD failed: {e}")
