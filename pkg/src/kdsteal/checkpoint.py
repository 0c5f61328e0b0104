"""Versioned, digest-protected model checkpoints.

Layout::

    b"KDSTCKPT"                8-byte magic
    uint32 (big endian)        header length
    header                     UTF-8 JSON: format_version, dims, activation,
                               n_params, optimizer (optional), metadata
    payload                    float64 little-endian parameters, then
                               optimizer buffers if present
    sha256                     32-byte digest of everything above

Any change to the file, including a single flipped bit, fails the digest.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import PersistenceError
from .nn import Mlp, OptimizerState

MAGIC = b"KDSTCKPT"
FORMAT_VERSION = 1


def _encode(model, meta, opt):
    header = {
        "format_version": FORMAT_VERSION,
        "dims": list(model.layer_dims),
        "activation": model.activation,
        "n_params": int(model.n_params),
        "metadata": meta or {},
    }
    payload = [model.flat_params()]
    if opt is not None:
        header["optimizer"] = {**opt.hyperparams(), "t": opt.t,
                               "has_second": bool(opt.second), "has_buffers": bool(opt.first)}
        for buf in opt.first + opt.second:
            payload.append(buf.ravel())
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = (MAGIC + struct.pack(">I", len(header_bytes)) + header_bytes
            + np.concatenate(payload).astype("<f8").tobytes())
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model, path, meta=None, opt=None):
    """Write ``model`` (and optionally optimizer state for resuming) to ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(_encode(model, meta, opt))
    except OSError as exc:
        raise PersistenceError(f"{path}: cannot write checkpoint ({exc})") from exc
    return path


def _decode(raw, path):
    if len(raw) < len(MAGIC) + 4 + 32:
        raise PersistenceError(f"{path}: file too short for a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise PersistenceError(f"{path}: digest mismatch, file is corrupted")
    if body[:len(MAGIC)] != MAGIC:
        raise PersistenceError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack(">I", body[8:12])
    header = json.loads(body[12:12 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(f"{path}: unsupported format version {header.get('format_version')}")
    values = np.frombuffer(body[12 + hlen:], dtype="<f8").astype(np.float64)
    return header, values


def load_checkpoint(path, with_optimizer=False):
    """Read a checkpoint. Returns the model, or ``(model, meta, opt)`` if asked."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PersistenceError(f"{path}: cannot read checkpoint ({exc})") from exc
    header, values = _decode(raw, path)
    dims = tuple(header["dims"])
    n = header["n_params"]
    weights = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    model = Mlp(dims, weights, biases, header["activation"])
    if model.n_params != n or values.size < n:
        raise PersistenceError(f"{path}: parameter count does not match dims {list(dims)}")
    model.set_flat_params(values[:n])
    if not with_optimizer:
        return model
    opt = None
    if "optimizer" in header:
        spec = dict(header["optimizer"])
        t, has_second, has_buffers = spec.pop("t"), spec.pop("has_second"), spec.pop("has_buffers")
        opt = OptimizerState(**spec, t=t)
        if has_buffers:
            shapes = []
            for w, b in zip(model.weights, model.biases):
                shapes += [w.shape, b.shape]
            pos = n
            groups = 2 if has_second else 1
            bufs = []
            for _ in range(groups):
                group = []
                for shape in shapes:
                    size = int(np.prod(shape))
                    group.append(values[pos:pos + size].reshape(shape).copy())
                    pos += size
                bufs.append(group)
            opt.first = bufs[0]
            opt.second = bufs[1] if has_second else []
    return model, header["metadata"], opt
