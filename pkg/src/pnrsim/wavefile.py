"""Binary waveform container (PNRW).

Little-endian layout:

    magic            4 bytes  b"PNRW"
    version          u16      currently 1
    sample_period_ns f64
    record_len       u32
    n_records        u32
    trigger_index    u32
    samples          n_records * record_len * i16

Records are fixed length; the trigger index is common to the whole file
(externally triggered acquisition).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PNRW"
VERSION = 1
_HEADER = struct.Struct("<4sHdIII")


class WaveFileError(Exception):
    """Raised for malformed or truncated waveform files."""


@dataclass(frozen=True)
class PnrwHeader:
    sample_period_ns: float
    record_len: int
    n_records: int
    trigger_index: int


class PnrwWriter:
    """Incremental writer; records can be appended chunk by chunk."""

    def __init__(self, path, record_len: int, sample_period_ns: float = 1.0,
                 trigger_index: int = 0):
        if record_len <= 0:
            raise ValueError("record_len must be > 0")
        self.path = path
        self.record_len = int(record_len)
        self.sample_period_ns = float(sample_period_ns)
        self.trigger_index = int(trigger_index)
        self.n_records = 0
        self._fh = open(path, "wb")
        self._write_header()

    def _write_header(self):
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.sample_period_ns,
                                    self.record_len, self.n_records,
                                    self.trigger_index))

    def append(self, records: np.ndarray):
        records = np.ascontiguousarray(records, dtype=np.int16)
        if records.ndim == 1:
            records = records[None, :]
        if records.ndim != 2 or records.shape[1] != self.record_len:
            raise ValueError(f"records must have shape (n, {self.record_len})")
        self._fh.write(records.tobytes())
        self.n_records += records.shape[0]

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._write_header()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_header(path) -> PnrwHeader:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise WaveFileError(f"{path}: truncated header")
    magic, version, ts, record_len, n_records, trig = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise WaveFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise WaveFileError(f"{path}: unsupported version {version}")
    return PnrwHeader(sample_period_ns=ts, record_len=record_len,
                      n_records=n_records, trigger_index=trig)


def read_pnrw(path) -> tuple[PnrwHeader, np.ndarray]:
    """Read a whole file into an (n_records, record_len) int16 array."""
    header = read_header(path)
    data = np.fromfile(path, dtype=np.int16, offset=_HEADER.size)
    expected = header.n_records * header.record_len
    if data.size != expected:
        raise WaveFileError(f"{path}: expected {expected} samples, found {data.size}")
    return header, data.reshape(header.n_records, header.record_len)


def iter_pnrw(path, chunk_records: int = 4096):
    """Yield (header, records) chunks without loading the whole file."""
    header = read_header(path)
    bytes_per_record = header.record_len * 2
    remaining = header.n_records
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        while remaining > 0:
            take = min(chunk_records, remaining)
            raw = fh.read(take * bytes_per_record)
            if len(raw) != take * bytes_per_record:
                raise WaveFileError(f"{path}: truncated records")
            yield header, np.frombuffer(raw, dtype=np.int16).reshape(
                take, header.record_len)
            remaining -= take
