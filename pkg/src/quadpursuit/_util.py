import dataclasses
import hashlib
import json
import os
from pathlib import Path

import numpy as np


def jsonable(obj):
    """Plain JSON types for dataclasses, tuples and numpy values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def stable_hash(*objs) -> str:
    """Short SHA-256 over the canonical JSON of ``objs``."""
    text = json.dumps([jsonable(o) for o in objs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, key)]).generate_state(1)[0])
