"""LCB1 frame archive.

Layout (little-endian): ``b"LCB1"``, u32 N, T, K, N*T*K float32 values in
(frame, time, channel) order, N label bytes indexing the manifest, then the
manifest as UTF-8 class names separated by newlines. A 12-channel archive
holds the standard lead order. Per-frame record ids, when known, go to a
``<archive>.records`` text sidecar.
"""
import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveError
from .preprocess import LEADS_12, TARGET_RATE, FrameDataset
from .wfdb import CLASS_NAMES, DiagnosisLabel

MAGIC = b"LCB1"


def manifest_for(labels):
    """Class names present in ``labels``, reference class order first."""
    present = {lab.class_name for lab in labels}
    ordered = [c for c in CLASS_NAMES if c in present]
    ordered += sorted(present - set(ordered))
    return ordered


def write_archive(path, dataset):
    path = Path(path)
    manifest = manifest_for(dataset.labels)
    if len(manifest) > 256:
        raise ArchiveError("at most 256 classes fit in a label byte")
    index = {c: i for i, c in enumerate(manifest)}
    N, T, K = dataset.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", N, T, K))
        fh.write(np.ascontiguousarray(dataset.data, dtype="<f4").tobytes())
        fh.write(bytes(index[lab.class_name] for lab in dataset.labels))
        fh.write("\n".join(manifest).encode("utf-8"))
    side = Path(str(path) + ".records")
    if dataset.record_ids is not None:
        side.write_text("\n".join(dataset.record_ids) + ("\n" if dataset.record_ids else ""), encoding="utf-8")
    elif side.exists():
        side.unlink()
    return path


def read_archive(path, channel_names=None):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ArchiveError(f"{path}: not an LCB1 archive")
    if len(raw) < 16:
        raise ArchiveError(f"{path}: truncated header")
    N, T, K = struct.unpack("<III", raw[4:16])
    n_vals = N * T * K
    end = 16 + 4 * n_vals
    if len(raw) < end + N:
        raise ArchiveError(f"{path}: truncated payload")
    data = np.frombuffer(raw[16:end], dtype="<f4").astype(np.float64).reshape(N, T, K)
    label_idx = raw[end : end + N]
    text = raw[end + N :].decode("utf-8")
    manifest = text.split("\n") if text else []
    if any(i >= len(manifest) for i in label_idx):
        raise ArchiveError(f"{path}: label byte outside manifest")
    labels = [DiagnosisLabel.from_class_name(manifest[i]) for i in label_idx]
    if channel_names is None:
        channel_names = LEADS_12 if K == len(LEADS_12) else tuple(f"ch{i}" for i in range(K))
    side = Path(str(path) + ".records")
    record_ids = None
    if side.exists():
        record_ids = side.read_text(encoding="utf-8").splitlines()
        if len(record_ids) != N:
            record_ids = None
    return FrameDataset(data, labels, channel_names, TARGET_RATE, record_ids)
