"""Checkpoint archives: raw little-endian float64 tensors plus a JSON manifest."""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, params: dict[str, Tensor], manifest: dict) -> str:
    """Write ``params`` and ``manifest``; byte-identical for identical inputs. Returns sha256."""
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = {name: list(params[name].shape) for name in sorted(params)}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f8")
            zf.writestr(_entry(f"tensors/{name}"), data.tobytes())
    raw = buf.getvalue()
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load_archive(path) -> tuple[dict[str, Tensor], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        params = {}
        for name, shape in manifest["tensors"].items():
            raw = zf.read(f"tensors/{name}")
            data = np.frombuffer(raw, dtype="<f8")
            if data.size != int(np.prod(shape)):
                raise ValueError(f"tensor {name}: payload size does not match shape {shape}")
            params[name] = Tensor(data.reshape(shape).astype(np.float64), requires_grad=True)
    return params, manifest


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
