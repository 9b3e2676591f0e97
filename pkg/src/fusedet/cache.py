"""Deterministic binary cache for large float arrays.

Dense per-proposal feature matrices are far too big for the text model
container, so they are cached as an uncompressed npz-compatible zip written
by hand with pinned member timestamps: identical arrays always produce
identical bytes. np.load reads these files directly.
"""

from __future__ import annotations

import io
import zipfile
from typing import Dict

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)  # oldest timestamp zip can carry


def save_arrays(path, arrays: Dict[str, np.ndarray]) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED, allowZip64=True) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            info.external_attr = 0o600 << 16
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with np.load(path) as data:
        for name in data.files:
            out[name] = data[name]
    return out
