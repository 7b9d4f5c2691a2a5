"""Versioned binary container for trained models (magic ``CRLM``).

Layout, all integers little-endian:

    offset  size  field
    0       4     magic ``CRLM``
    4       2     format version (uint16), currently 1
    6       1     payload kind: ``N`` single network, ``M`` composite module
    7       1     reserved, 0
    8       4     header length H (uint32)
    12      H     header JSON (UTF-8, sorted keys): {"meta": ..., "sections":
                  [{"name": ..., "len": ...}, ...]}
    12+H    ...   section byte blobs, concatenated in listed order
    end-32  32    SHA-256 digest of every preceding byte

Parameter sections are raw little-endian float64 arrays.  Writing is
fully deterministic: identical meta and sections give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import SerializationError
from .network import QNetwork, build_qnetwork

MAGIC = b"CRLM"
FORMAT_VERSION = 1
KIND_NETWORK = "N"
KIND_MODULE = "M"

_DIGEST_LEN = 32


class ContainerFormatError(SerializationError):
    """Not a container, or a structurally broken one."""


class UnsupportedVersionError(SerializationError):
    """A container written by an incompatible format version."""


class ChecksumMismatchError(SerializationError):
    """Stored digest does not match the container bytes."""


def encode_container(kind: str, meta: dict, sections: dict[str, bytes]) -> bytes:
    names = sorted(sections)
    header = {
        "meta": meta,
        "sections": [{"name": n, "len": len(sections[n])} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(sections[n] for n in names)
    prefix = MAGIC + struct.pack("<HBB", FORMAT_VERSION, ord(kind), 0)
    prefix += struct.pack("<I", len(header_bytes)) + header_bytes + body
    return prefix + hashlib.sha256(prefix).digest()


def write_container(path: str | Path, kind: str, meta: dict, sections: dict[str, bytes]) -> None:
    Path(path).write_bytes(encode_container(kind, meta, sections))


def decode_container(blob: bytes, expected_kind: str | None = None) -> tuple[str, dict, dict[str, bytes]]:
    if len(blob) < 12 + _DIGEST_LEN or blob[:4] != MAGIC:
        raise ContainerFormatError("not a CRLM container")
    digest = blob[-_DIGEST_LEN:]
    if hashlib.sha256(blob[:-_DIGEST_LEN]).digest() != digest:
        raise ChecksumMismatchError("container checksum mismatch; file is corrupt")
    version, kind_byte, _ = struct.unpack("<HBB", blob[4:8])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"container format version {version} unsupported (expected {FORMAT_VERSION})")
    kind = chr(kind_byte)
    if expected_kind is not None and kind != expected_kind:
        raise ContainerFormatError(f"expected a {expected_kind!r} container, found {kind!r}")
    (header_len,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"bad container header: {exc}") from None
    sections: dict[str, bytes] = {}
    offset = 12 + header_len
    for entry in header["sections"]:
        sections[entry["name"]] = blob[offset : offset + entry["len"]]
        offset += entry["len"]
    if offset != len(blob) - _DIGEST_LEN:
        raise ContainerFormatError("section table inconsistent with container size")
    return kind, header["meta"], sections


def read_container(path: str | Path, expected_kind: str | None = None) -> tuple[str, dict, dict[str, bytes]]:
    return decode_container(Path(path).read_bytes(), expected_kind)


# ---------------------------------------------------------------------------
# Network payloads


def params_to_bytes(params: np.ndarray) -> bytes:
    return np.ascontiguousarray(params, dtype="<f8").tobytes()


def params_from_bytes(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<f8").astype(np.float64)


def network_meta(net: QNetwork) -> dict:
    return {
        "arch": net.arch,
        "input_shape": list(net.input_shape),
        "n_actions": net.n_actions,
        "seed": net.seed,
        "layer_shapes": net.layer_shapes(),
    }


def network_from_parts(meta: dict, params: np.ndarray) -> QNetwork:
    net = build_qnetwork(meta["arch"], tuple(meta["input_shape"]), meta["seed"])
    if net.layer_shapes() != [list(s) for s in meta["layer_shapes"]]:
        raise ContainerFormatError("stored layer shapes do not match the architecture")
    if params.size != net.n_params:
        raise ContainerFormatError(f"expected {net.n_params} parameters, found {params.size}")
    net.set_params_flat(params)
    return net


def save_network(net: QNetwork, path: str | Path) -> None:
    write_container(path, KIND_NETWORK, network_meta(net), {"params": params_to_bytes(net.params_flat())})


def load_network(path: str | Path) -> QNetwork:
    _, meta, sections = read_container(path, expected_kind=KIND_NETWORK)
    return network_from_parts(meta, params_from_bytes(sections["params"]))
