"""Named-array checkpoint container.

Layout: an uncompressed ZIP archive (numpy ``.npz``) with one ``.npy`` member
per parameter, each stored little-endian with its shape and dtype in the npy
header, plus a ``__manifest__`` member holding UTF-8 JSON:
``{"format": "sganvo-ckpt", "version": 1, "names": [...], "meta": {...}}``.
Names follow ``layer{l}/{unit}/{param}``.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT = "sganvo-ckpt"
VERSION = 1


def _member(name: str) -> str:
    return name.replace("/", "__") + ".npy"


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(arrays)
    manifest = {"format": FORMAT, "version": VERSION, "names": names, "meta": meta or {}}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("__manifest__", json.dumps(manifest, sort_keys=True))
        for name in names:
            arr = np.asarray(arrays[name])
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(_member(name), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple:
    """Return ``(arrays, meta)``; arrays keep the manifest order."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("__manifest__").decode("utf-8"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        arrays = {}
        for name in manifest["names"]:
            with zf.open(_member(name)) as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return arrays, manifest.get("meta", {})
