"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"GTCK" | version | header_len | header (UTF-8 JSON) | n_params |
    n_params x (name_len | name | rank | dims[rank] | float32 LE payload)

The JSON header echoes the run configuration, the step count and the
vocabulary.
"""

import json
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"GTCK"
VERSION = 1


class CheckpointError(ContractError):
    pass


def save_checkpoint(path, model, run_config, step, vocab_symbols, extra=None):
    header = {
        "run_config": run_config.to_dict(),
        "step": int(step),
        "vocab": list(vocab_symbols),
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    named = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path):
    """Return (header dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = 4
    version, hlen = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[off : off + hlen].decode("utf-8"))
    off += hlen
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nl].decode("utf-8")
        off += nl
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        params[name] = arr.astype(np.float32)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return header, params


def load_into(model, params):
    named = dict(model.named_parameters())
    missing = set(named) - set(params)
    extra = set(params) - set(named)
    if missing or extra:
        raise CheckpointError(f"parameter names differ (missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})")
    for name, p in named.items():
        if p.shape != params[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {params[name].shape} vs model {p.shape}")
        p.data[...] = params[name]


def load_checkpoint(path):
    """Rebuild the model, run config and vocabulary stored in ``path``."""
    from .config import RunConfig
    from .data import Vocabulary
    from .model import Seq2Seq

    header, params = read_checkpoint(path)
    run = RunConfig.from_dict(header["run_config"])
    model = Seq2Seq(run.model, seed=run.seed)
    load_into(model, params)
    vocab = Vocabulary(header["vocab"])
    return model, run, vocab, header
