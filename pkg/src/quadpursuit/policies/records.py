"""Policy records and the PEPO weight file.

Layout, all integers little-endian::

    b"PEPO"
    u32 format version
    u32 metadata count, then per entry: u32 len + UTF-8 key, u32 len + UTF-8 value
    u32 tensor count, then per tensor: u32 len + UTF-8 name, u32 ndim, u32 dims...,
        row-major float32 values
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env import ROLES
from .gaussian import HEURISTIC, MODALITIES, GaussianPolicy, act
from .heuristics import Heuristic
from .mlp import MlpParams

MAGIC = b"PEPO"
FORMAT_VERSION = 1


class PolicyFileError(ValueError):
    pass


class ChecksumError(PolicyFileError):
    pass


class TruncatedFileError(PolicyFileError):
    pass


class FormatVersionError(PolicyFileError):
    pass


class ModalityMismatchError(ValueError):
    pass


@dataclass
class PolicyRecord:
    id: str
    role: str
    modality: str
    stage_index: int
    policy: GaussianPolicy | None = None
    heuristic: Heuristic | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if (self.policy is None) == (self.heuristic is None):
            raise ValueError("a record holds either network weights or a heuristic spec")
        if self.heuristic is not None and self.modality != HEURISTIC:
            raise ValueError("heuristic records must use the heuristic modality")
        if self.policy is not None:
            if self.policy.modality != self.modality:
                raise ValueError(f"record modality {self.modality!r} but policy is {self.policy.modality!r}")
            if self.policy.log_std.dtype != np.float32:
                # published weights are what the file stores, so round-trips are exact
                self.policy = self.policy.astype(np.float32)

    @property
    def command_kind(self) -> str:
        """Command modality the record emits at the vehicle interface."""
        return "velocity" if self.modality == HEURISTIC else self.modality

    def command(self, env, rows, deterministic: bool = True, rng=None):
        """Commands for ``rows`` of a batch, acting as ``self.role``."""
        if self.heuristic is not None:
            return self.heuristic.command(env, self.role, rows)
        obs = env.observe(self.role)[rows]
        return act(self.policy, obs, deterministic=deterministic, rng=rng).action


def _tensors(policy: GaussianPolicy) -> list[tuple[str, np.ndarray]]:
    out = []
    for net_name, net in (("actor", policy.actor), ("critic", policy.critic)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            out += [(f"{net_name}.w{i}", w), (f"{net_name}.b{i}", b)]
    out.append(("log_std", policy.log_std))
    return out


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def encode_record(record: PolicyRecord) -> bytes:
    meta = {
        "id": record.id,
        "role": record.role,
        "modality": record.modality,
        "stage_index": str(record.stage_index),
        "activation": "tanh",
    }
    if record.heuristic is not None:
        meta["heuristic"] = json.dumps(record.heuristic.to_dict(), sort_keys=True)
    for k, v in record.metadata.items():
        meta[f"meta.{k}"] = str(v)
    tensors = _tensors(record.policy) if record.policy is not None else []

    parts = [MAGIC, _u32(FORMAT_VERSION), _u32(len(meta))]
    for k, v in meta.items():
        parts += [_str(k), _str(v)]
    parts.append(_u32(len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [_str(name), _u32(arr.ndim)] + [_u32(d) for d in arr.shape] + [arr.tobytes()]
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def str(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _parse_body(body: bytes):
    r = _Reader(body)
    r.take(8)
    meta = {}
    for _ in range(r.u32()):
        k = r.str()
        meta[k] = r.str()
    tensors = {}
    for _ in range(r.u32()):
        name = r.str()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise PolicyFileError(f"{len(body) - r.pos} trailing bytes after the last tensor")
    return meta, tensors


def decode_record(data: bytes) -> PolicyRecord:
    if len(data) < 12:
        raise TruncatedFileError(f"only {len(data)} bytes; not a complete PEPO file")
    if data[:4] != MAGIC:
        raise PolicyFileError(f"bad magic {data[:4]!r}")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"PEPO format version {version}, this reader handles {FORMAT_VERSION}")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        # a cut-off file usually also fails to parse; report that as the more useful cause
        try:
            _parse_body(body)
        except TruncatedFileError:
            raise
        except (PolicyFileError, UnicodeDecodeError, ValueError):
            pass
        raise ChecksumError("CRC-32 mismatch; the file is corrupted")
    meta, tensors = _parse_body(body)

    heuristic = None
    policy = None
    if "heuristic" in meta:
        heuristic = Heuristic.from_dict(json.loads(meta["heuristic"]))
    else:
        policy = _policy_from_tensors(tensors, meta["modality"])
    extra = {k[len("meta."):]: v for k, v in meta.items() if k.startswith("meta.")}
    return PolicyRecord(meta["id"], meta["role"], meta["modality"], int(meta["stage_index"]),
                        policy=policy, heuristic=heuristic, metadata=extra)


def _policy_from_tensors(tensors: dict, modality: str) -> GaussianPolicy:
    nets = {}
    for net_name in ("actor", "critic"):
        weights, biases = [], []
        i = 0
        while f"{net_name}.w{i}" in tensors:
            weights.append(tensors[f"{net_name}.w{i}"])
            biases.append(tensors[f"{net_name}.b{i}"])
            i += 1
        nets[net_name] = MlpParams(weights, biases)
    return GaussianPolicy(nets["actor"], tensors["log_std"], nets["critic"], modality)


def save_policy(record: PolicyRecord, path) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_record(record))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_policy(path, expected_modality: str | None = None, expected_role: str | None = None) -> PolicyRecord:
    record = decode_record(Path(path).read_bytes())
    if expected_modality is not None and record.modality != expected_modality:
        raise ModalityMismatchError(
            f"{record.id} is a {record.modality} policy, slot expects {expected_modality}")
    if expected_role is not None and record.role != expected_role:
        raise ValueError(f"{record.id} is a {record.role}, slot expects {expected_role}")
    return record
