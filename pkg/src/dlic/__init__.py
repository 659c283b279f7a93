"""Instance-adaptive neural image compression.

A small transform codec whose decoder is re-fitted to every image: latents
are refined by gradient descent, low-rank updates to the synthesis layers
are entropy-coded into the bitstream, and tiny learned gates decide per
layer whether an update pays for its rate. A one-step variant replaces
per-image optimization with a nearest-cluster lookup into a pre-fitted
update bank.
"""

import torch as _torch

# Single-threaded math keeps encoder and decoder bit-exact run to run.
_torch.set_num_threads(1)

from .adapt import (AdaptationConfig, AdaptationResult, adapt_decoder, adapt_image,
                    decode_with_updates, refine_latent)
from .adapters import (DecoderUpdate, LowRankUpdate, QuantizedUpdate, count_params,
                       make_low_rank, make_update)
from .codec import (CodecModel, ImageTensor, LatentCode, analyze, latent_rate,
                    load_checkpoint, model_identity, pad_to_multiple, quantize_latent,
                    save_checkpoint, synthesize, train_base)
from .container import decode_image, encode_image, pack, unpack
from .delta_prior import DeltaPriorConfig, cdf, delta_rate, dequantize, quantize_delta, symbol_prob
from .errors import (AdaptationError, ContractError, DecodeError,
                     IncompatibleBitstreamError, ShapeError, TrainingError)
from .gating import GateNetwork, GateVector, gate_forward, warmup_override
from .metrics import RDCurve, RDPoint, bd_rate, psnr
from .onestep import DeltaBank, build_bank, onestep_encode
from .rangecoder import FrequencyTable, RangeDecoder, RangeEncoder

__version__ = "0.1.0"
