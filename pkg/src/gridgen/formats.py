"""Binary file formats: codebooks (CBK1), latent datasets (LDS1), grayscale
images (binary PGM, P5), and the self-describing checkpoint container (CKP1).

All multi-byte integers are little-endian. Every writer/reader pair round-trips
bit-exactly; tests enforce it.
"""

import json
import struct

import numpy as np

from .errors import FormatError

_U16_MAX = 0xFFFF


def write_codebook(path, codebook):
    """CBK1: magic, u32 (v, f, channels, d_c), then v*d_c float32 row-major."""
    cw = np.ascontiguousarray(codebook.codewords, dtype="<f4")
    v, d_c = cw.shape
    with open(path, "wb") as fh:
        fh.write(b"CBK1")
        fh.write(struct.pack("<4I", v, codebook.patch_size, codebook.channels, d_c))
        fh.write(cw.tobytes())


def read_codebook(path):
    from .codec import Codebook

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"CBK1":
        raise FormatError(f"{path}: bad magic, not a CBK1 codebook")
    v, f, channels, d_c = struct.unpack_from("<4I", data, 4)
    if d_c != f * f * channels:
        raise FormatError(f"{path}: inconsistent header (d_c={d_c}, f={f}, channels={channels})")
    body = data[20:]
    if len(body) != v * d_c * 4:
        raise FormatError(f"{path}: truncated codeword payload")
    cw = np.frombuffer(body, dtype="<f4").reshape(v, d_c).copy()
    return Codebook(vocab=v, patch_size=f, channels=channels, codewords=cw)


def write_latent_dataset(path, dataset):
    """LDS1: magic, u32 (v, h, w, count, labels_flag), u16 tokens, u16 labels."""
    if dataset.vocab > _U16_MAX + 1:
        raise FormatError(f"vocab {dataset.vocab} exceeds u16 token storage")
    entries = np.ascontiguousarray(dataset.entries, dtype="<u2")
    count, h, w = entries.shape
    labels_flag = 1 if dataset.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(b"LDS1")
        fh.write(struct.pack("<5I", dataset.vocab, h, w, count, labels_flag))
        fh.write(entries.tobytes())
        if labels_flag:
            fh.write(np.ascontiguousarray(dataset.labels, dtype="<u2").tobytes())


def read_latent_dataset(path):
    from .codec import LatentDataset

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"LDS1":
        raise FormatError(f"{path}: bad magic, not an LDS1 dataset")
    v, h, w, count, labels_flag = struct.unpack_from("<5I", data, 4)
    ntok = count * h * w
    off = 24
    if len(data) < off + 2 * ntok + (2 * count if labels_flag else 0):
        raise FormatError(f"{path}: truncated token payload")
    entries = np.frombuffer(data, dtype="<u2", count=ntok, offset=off)
    entries = entries.reshape(count, h, w).copy()
    labels = None
    if labels_flag:
        labels = np.frombuffer(data, dtype="<u2", count=count, offset=off + 2 * ntok).copy()
    return LatentDataset(vocab=v, grid_shape=(h, w), entries=entries, labels=labels)


def write_pgm(path, image):
    """Binary PGM (P5, maxval 255) from a float image in [0, 1]."""
    img = np.asarray(image)
    raw = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def read_pgm(path):
    """Reads a binary PGM into a float32 image scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated PGM header")
        c = data[pos]
        if c in b" \t\r\n":
            pos += 1
        elif c in b"#":
            pos = data.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(data) and data[end] not in b" \t\r\n":
                end += 1
            fields.append(data[pos:end])
            pos = end
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary (P5) PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return (raw.reshape(h, w).astype(np.float32)) / np.float32(255.0)


def write_checkpoint(path, config, tensors, extra=None):
    """CKP1 container: magic, u32 header length, JSON header, raw tensors.

    The header records dtype/shape/offset per tensor, so the file is
    self-describing; tensor bytes are written untouched, making the
    round-trip bit-exact.
    """
    manifest, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": 1, "config": config, "tensors": manifest, "extra": extra or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(b"CKP1")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path):
    """Returns (config, tensors, extra) from a CKP1 container."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"CKP1":
        raise FormatError(f"{path}: bad magic, not a CKP1 checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    base = 8 + hlen
    tensors = {}
    for spec in header["tensors"]:
        start = base + spec["offset"]
        blob = data[start : start + spec["nbytes"]]
        if len(blob) != spec["nbytes"]:
            raise FormatError(f"{path}: truncated tensor {spec['name']!r}")
        arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]))
        tensors[spec["name"]] = arr.reshape(spec["shape"]).copy()
    return header["config"], tensors, header.get("extra", {})
