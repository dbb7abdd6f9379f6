"""The OTBSS1 model container.

Layout, all integers little-endian u32::

    b"OTBSS1" | version | len(config) | config text (UTF-8, key = value lines)
    | n_matrices | for each: len(name) | name | rows | cols | rows*cols f64 LE, row-major

Matrices: ``grid`` (1 x n training grid), ``reg`` (1 x 3: gamma, rho1, rho2
in absolute units) and one ``dict/<label>`` (n x k) per source, in order.
"""

from __future__ import annotations

import csv
import os
import struct

import numpy as np

from .config import Config, parse_config
from .errors import IoError, UnsupportedFormat
from .nmf import Dictionary, RegularizerSpec
from .separation import SourceModel

MAGIC = b"OTBSS1"
VERSION = 1
_U32 = struct.Struct("<I")


def _pack_matrix(name: str, M) -> bytes:
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    raw = name.encode("utf-8")
    return (_U32.pack(len(raw)) + raw + _U32.pack(M.shape[0]) + _U32.pack(M.shape[1])
            + np.ascontiguousarray(M).tobytes())


def dumps(model: SourceModel, config: Config) -> bytes:
    text = config.to_text().encode("utf-8")
    mats = [("grid", model.training_grid[None, :]),
            ("reg", [[model.reg.gamma, model.reg.rho1, model.reg.rho2]])]
    mats += [(f"dict/{label}", d.atoms) for label, d in zip(model.labels, model.dictionaries)]
    body = b"".join(_pack_matrix(name, M) for name, M in mats)
    return MAGIC + _U32.pack(VERSION) + _U32.pack(len(text)) + text + _U32.pack(len(mats)) + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise UnsupportedFormat("archive is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def read_matrices(data: bytes) -> tuple[str, list]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise UnsupportedFormat("not an OTBSS1 archive")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedFormat(f"archive version {version} is not supported")
    text = r.take(r.u32()).decode("utf-8")
    mats = []
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rows, cols = r.u32(), r.u32()
        M = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(float)
        mats.append((name, M))
    if r.pos != len(data):
        raise UnsupportedFormat("trailing bytes after the last matrix")
    return text, mats


def loads(data: bytes) -> tuple[SourceModel, Config]:
    text, mats = read_matrices(data)
    config = parse_config(text)
    named = dict(mats)
    if "grid" not in named or "reg" not in named:
        raise UnsupportedFormat("archive lacks the grid or regularization record")
    grid = named["grid"][0]
    gamma, rho1, rho2 = named["reg"][0]
    dicts = [Dictionary(M, grid, [name[len("dict/"):]] * M.shape[1])
             for name, M in mats if name.startswith("dict/")]
    if not dicts:
        raise UnsupportedFormat("archive holds no dictionary")
    model = SourceModel(dicts, grid, RegularizerSpec(gamma, rho1, rho2), config.cost_spec)
    return model, config


def save(path, model: SourceModel, config: Config):
    try:
        with open(path, "wb") as fh:
            fh.write(dumps(model, config))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def load(path) -> tuple[SourceModel, Config]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return loads(data)


def export_csv(path, out_dir):
    """Write every matrix of an archive as ``<name>.csv`` (``/`` becomes ``_``)."""
    with open(path, "rb") as fh:
        _, mats = read_matrices(fh.read())
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, M in mats:
        target = os.path.join(out_dir, name.replace("/", "_") + ".csv")
        with open(target, "w", newline="") as fh:
            csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in M])
        written.append(target)
    return written
