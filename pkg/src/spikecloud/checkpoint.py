"""Binary tensor container used for network checkpoints and cached groupings.

Layout::

    magic   4 bytes  b"SPKC"
    version u16      little-endian
    flags   u16      reserved, zero
    hlen    u64      header length in bytes
    header  hlen     UTF-8 JSON: {..., "manifest": [{name, shape, offset}, ...]}
    payload          little-endian float32 tensors, offsets relative to payload start

All values are stored as float32; integer arrays round-trip exactly as long as
they stay below 2**24.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, CheckpointShapeError, CheckpointVersionError
from .pointcloud import GroupedInput
from .snn.network import NetworkConfig, SpikeCloudNet

MAGIC = b"SPKC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHHQ")


def pack_tensors(tensors: dict[str, np.ndarray], header: dict | None = None) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4")  # keeps 0-d shapes, unlike ascontiguousarray
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    head = dict(header or {})
    head["format_version"] = FORMAT_VERSION
    head["manifest"] = manifest
    hbytes = json.dumps(head, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, 0, len(hbytes)) + hbytes + b"".join(blobs)


def unpack_tensors(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"truncated container: {len(data)} bytes, prefix needs {_PREFIX.size}")
    magic, version, _, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointVersionError(
            f"bad magic {magic!r}: not a format-{FORMAT_VERSION} checkpoint (expected {MAGIC!r})"
        )
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this reader handles {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    payload = memoryview(data)[start:]
    tensors, end_prev = {}, 0
    for entry in sorted(header.get("manifest", []), key=lambda e: e["offset"]):
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        off = int(entry["offset"])
        if off < end_prev:
            raise CheckpointError(f"manifest entry {entry['name']!r} overlaps the previous tensor")
        if off + nbytes > len(payload):
            raise CheckpointError(
                f"truncated payload: tensor {entry['name']!r} needs bytes [{off}, {off + nbytes}), "
                f"payload has {len(payload)}"
            )
        tensors[entry["name"]] = np.frombuffer(payload[off:off + nbytes], dtype="<f4").reshape(shape).copy()
        end_prev = off + nbytes
    return header, tensors


def save_checkpoint(net: SpikeCloudNet, path, epoch: int | None = None, metrics: dict | None = None,
                    extra: dict | None = None) -> None:
    header = {"config": net.cfg.to_dict(), "epoch": epoch, "metrics": metrics or {}}
    header.update(extra or {})
    state = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    Path(path).write_bytes(pack_tensors(state, header))


def load_state(net: SpikeCloudNet, tensors: dict[str, np.ndarray]) -> None:
    expected = net.state_dict()
    missing = [k for k in expected if k not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor {missing[0]!r}")
    unexpected = [k for k in tensors if k not in expected]
    if unexpected:
        raise CheckpointError(f"checkpoint has unknown tensor {unexpected[0]!r}")
    state = {}
    for name, ref in expected.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointShapeError(name, tuple(ref.shape), tuple(arr.shape))
        state[name] = torch.from_numpy(arr).to(ref.dtype)
    net.load_state_dict(state)


def load_checkpoint(path, cfg: NetworkConfig | None = None) -> tuple[SpikeCloudNet, dict]:
    """Rebuild the network from the stored config (or ``cfg``) and load its state."""
    header, tensors = unpack_tensors(Path(path).read_bytes())
    if cfg is None:
        if "config" not in header:
            raise CheckpointError("checkpoint header has no network config")
        cfg = NetworkConfig.from_dict(header["config"])
    net = SpikeCloudNet(cfg)
    load_state(net, tensors)
    net.eval()
    return net, header


_GROUPED_FIELDS = ("centroids", "member_idx", "channel1", "channel2", "offsets", "points")


def save_grouped(samples: list[GroupedInput], path, labels=None, header: dict | None = None) -> None:
    """Cache preprocessed samples; positions are float32 on disk."""
    tensors = {}
    for i, g in enumerate(samples):
        for f in _GROUPED_FIELDS:
            tensors[f"{i}.{f}"] = getattr(g, f)
    head = {"kind": "grouped", "count": len(samples), "sd": [g.sd for g in samples],
            "labels": None if labels is None else [int(x) for x in labels]}
    head.update(header or {})
    Path(path).write_bytes(pack_tensors(tensors, head))


def load_grouped(path) -> tuple[list[GroupedInput], dict]:
    header, tensors = unpack_tensors(Path(path).read_bytes())
    if header.get("kind") != "grouped":
        raise CheckpointError("file does not hold grouped samples")
    out = []
    for i in range(header["count"]):
        parts = {f: tensors[f"{i}.{f}"] for f in _GROUPED_FIELDS}
        parts["member_idx"] = parts["member_idx"].astype(np.int64)
        out.append(GroupedInput(sd=float(header["sd"][i]), **parts))
    return out, header
