"""Binary checkpoint container.

Layout::

    b"ADCK1"                       magic
    uint64 little-endian           length L of the metadata block
    L bytes                        UTF-8 JSON metadata (sorted keys, compact)
    payload                        float32 little-endian tensors, in index order

The metadata carries ``kind`` (denoiser | classifier), the model config, the
vocabulary, the noise schedule and its digest, the creation seed, free-form
``extra`` fields and the tensor index ``[{name, shape, offset}]`` where offsets
are byte offsets into the payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..classifier import ClassifierConfig, GraphClassifier
from ..denoiser import DenoiserConfig, GraphDenoiser
from ..diffusion import NoiseSchedule
from ..molgraph import Vocabulary

MAGIC = b"ADCK1"
KINDS = ("denoiser", "classifier")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    vocabulary: dict
    schedule: dict
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def schedule_digest(self) -> str:
        return NoiseSchedule.from_json(self.schedule).digest()

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary.from_json(self.vocabulary)

    @property
    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_json(self.schedule)

    def metadata(self) -> dict:
        index, offset = [], 0
        for name, arr in self.tensors.items():
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 4
        return {
            "kind": self.kind,
            "config": self.config,
            "vocabulary": self.vocabulary,
            "schedule": self.schedule,
            "schedule_digest": self.schedule_digest,
            "vocab_digest": self.vocab.digest(),
            "seed": self.seed,
            "extra": self.extra,
            "tensors": index,
        }

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata(), sort_keys=True, separators=(",", ":")).encode()
        body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.tensors.values())
        return MAGIC + struct.pack("<Q", len(meta)) + meta + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (n,) = struct.unpack_from("<Q", data, len(MAGIC))
        start = len(MAGIC) + 8
        meta = json.loads(data[start : start + n].decode())
        if meta.get("kind") not in KINDS:
            raise CheckpointError(f"unknown artifact kind {meta.get('kind')!r}")
        payload = memoryview(data)[start + n :]
        tensors = {}
        for entry in meta["tensors"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            off = entry["offset"]
            if off + 4 * count > len(payload):
                raise CheckpointError(f"truncated payload for {entry['name']}")
            arr = np.frombuffer(payload[off : off + 4 * count], dtype="<f4").reshape(entry["shape"])
            tensors[entry["name"]] = arr.astype(np.float32)
        ck = cls(meta["kind"], meta["config"], meta["vocabulary"], meta["schedule"], meta["seed"], tensors, meta["extra"])
        if meta["schedule_digest"] != ck.schedule_digest:
            raise CheckpointError("stored schedule digest does not match the stored schedule")
        return ck


def save(ck: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(ck.to_bytes())


def load(path: str | Path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def from_model(
    model: torch.nn.Module, kind: str, vocab: Vocabulary, schedule: NoiseSchedule, seed: int, extra: dict | None = None
) -> Checkpoint:
    if kind not in KINDS:
        raise CheckpointError(f"unknown artifact kind {kind!r}")
    tensors = {k: v.detach().cpu().to(torch.float32).numpy().copy() for k, v in model.state_dict().items()}
    return Checkpoint(kind, model.cfg.to_json(), vocab.to_json(), schedule.to_json(), int(seed), tensors, dict(extra or {}))


def to_model(ck: Checkpoint) -> torch.nn.Module:
    if ck.kind == "denoiser":
        model = GraphDenoiser(DenoiserConfig(**ck.config))
    else:
        model = GraphClassifier(ClassifierConfig(**ck.config))
    state = {k: torch.from_numpy(v.copy()) for k, v in ck.tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model
