import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from src.engine.hmm import HmmParams, HmmVariant
from src.engine.nnet import NetworkParams
from src.errors import ContractViolation, DatasetError

logger = logging.getLogger(__name__)

MAGIC = b"SCV1"
# optional trailer after the HMM block: tag, then uint32 variant code
VARIANT_TAG = b"HMMV"
VARIANT_CODES = {"static": 0, "dynamic": 1, "ground_truth": 2}
_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class Checkpoint:
    network: NetworkParams
    hmm: HmmParams


def _floats(*arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    net, hmm = ckpt.network, ckpt.hmm
    if net.n_classes != hmm.n_classes:
        raise ContractViolation("Network and HMM disagree on the number of classes")
    header = MAGIC + struct.pack("<III", net.d, net.n_h, net.n_classes)
    hmm_header = struct.pack("<II", hmm.n_classes, hmm.l_min)
    return (
        header
        + _floats(net.W1, net.b1, net.W2, net.b2)
        + hmm_header
        + _floats(hmm.log_transitions, hmm.lengths, hmm.log_priors)
        + VARIANT_TAG
        + struct.pack("<I", VARIANT_CODES[hmm.variant])
    )


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise DatasetError(f"Checkpoint {self.source} is truncated at byte {self.offset}")
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def floats(self, *shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * 8), dtype=_F64).astype(np.float64).reshape(shape)


def _read_variant(reader: _Reader, source: str) -> Optional[HmmVariant]:
    if reader.offset == len(reader.payload):
        return None
    if reader.take(4) != VARIANT_TAG:
        raise DatasetError(f"{source} has {len(reader.payload) - reader.offset + 4} trailing bytes")
    (code,) = struct.unpack("<I", reader.take(4))
    names = {v: k for k, v in VARIANT_CODES.items()}
    if code not in names:
        raise DatasetError(f"{source}: unknown HMM variant code {code}")
    return names[code]


def decode_checkpoint(
    payload: bytes, source: str = "<bytes>", variant: Optional[HmmVariant] = None
) -> Checkpoint:
    """Parse an SCV1 payload.

    The HMM variant is taken from ``variant`` when given, else from the
    stored trailer, else "dynamic".
    """
    reader = _Reader(payload, source)
    if reader.take(4) != MAGIC:
        raise DatasetError(f"{source} is not an SCV1 checkpoint")
    d, n_h, n_classes = struct.unpack("<III", reader.take(12))
    network = NetworkParams(
        W1=reader.floats(n_h, d),
        b1=reader.floats(n_h),
        W2=reader.floats(n_classes, n_h),
        b2=reader.floats(n_classes),
    )
    k, l_min = struct.unpack("<II", reader.take(8))
    if k != n_classes:
        raise DatasetError(f"{source}: HMM has {k} classes, network {n_classes}")
    log_transitions = reader.floats(k, k)
    lengths = reader.floats(k)
    log_priors = reader.floats(k)
    stored = _read_variant(reader, source)
    if reader.offset != len(payload):
        raise DatasetError(f"{source} has {len(payload) - reader.offset} trailing bytes")
    if variant is not None and stored is not None and variant != stored:
        logger.warning(f"{source} was trained with the {stored} HMM; using {variant}")
    hmm = HmmParams(
        log_transitions=log_transitions,
        lengths=lengths,
        log_priors=log_priors,
        l_min=l_min,
        variant=variant or stored or "dynamic",
    )
    return Checkpoint(network=network, hmm=hmm)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode_checkpoint(ckpt))
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path, variant: Optional[HmmVariant] = None) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        payload = f.read()
    return decode_checkpoint(payload, source=str(path), variant=variant)
