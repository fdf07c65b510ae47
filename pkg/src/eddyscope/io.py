"""File formats: MSR binary containers, JSON documents and CSV tables."""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

from .errors import EddyscopeError
from .forward import MsrMatrix

MAGIC = b"EMSR"
VERSION = 1
NO_SEED = 2**64 - 1
# magic, version, N, M, omega, sigma_noise, seed, q
_HEADER = struct.Struct("<4sIIIddQ3d")


class FormatError(EddyscopeError, OSError):
    """A file does not follow the expected layout."""


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8",
                                                              "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def msr_to_bytes(msr: MsrMatrix) -> bytes:
    N, M = msr.shape
    seed = NO_SEED if msr.seed is None else int(msr.seed)
    header = _HEADER.pack(MAGIC, VERSION, N, M, float(msr.omega),
                          float(msr.sigma_noise), seed, *map(float, msr.q))
    return header + np.ascontiguousarray(msr.A, dtype="<f8").tobytes()


def msr_from_bytes(data: bytes) -> MsrMatrix:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for an MSR header")
    magic, version, N, M, omega, sigma, seed, *q = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not an MSR container (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported MSR version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * N * M:
        raise FormatError(f"payload holds {len(body)} bytes, expected {8 * N * M}")
    A = np.frombuffer(body, dtype="<f8").reshape(N, M)
    return MsrMatrix(A, omega, np.array(q), sigma, None if seed == NO_SEED else seed)


def write_msr(path, msr: MsrMatrix) -> None:
    atomic_write(path, msr_to_bytes(msr))


def read_msr(path) -> MsrMatrix:
    with open(path, "rb") as fh:
        return msr_from_bytes(fh.read())


def msr_to_csv(msr: MsrMatrix) -> str:
    buf = io.StringIO()
    np.savetxt(buf, msr.A, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows) -> None:
    atomic_write(path, rows_to_csv(header, rows))
