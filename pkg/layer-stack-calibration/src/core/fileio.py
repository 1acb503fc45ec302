"""
Shared file plumbing: atomic replacement of output files and the
CRC-sealed little-endian container layout used by dumps and probe bundles.
"""

import os
import struct
import logging
import tempfile
import zlib
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from .errors import BadMagicError, ChecksumMismatchError, TruncatedPayloadError, VersionMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

CRC_FOOTER = struct.Struct("<I")
MAGIC_AND_VERSION = struct.Struct("<4sI")


@retry(
    retry=retry_if_exception_type((PermissionError, BlockingIOError)),
    stop=stop_after_attempt(5),
    wait=wait_exponential(multiplier=0.05, min=0.05, max=1),
    reraise=True,
)
def _replace(src: str, dst: str) -> None:
    os.replace(src, dst)


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write payload to path through a temp file in the same directory and a rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        _replace(tmp_name, str(target))
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {len(payload)} bytes to {target}")
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def seal(payload: bytes) -> bytes:
    """Append the CRC32 of payload as a little-endian u32 footer."""
    return payload + CRC_FOOTER.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def verify_footer(raw: bytes, what: str) -> bytes:
    """Check the CRC32 footer and return the payload without it."""
    if len(raw) < CRC_FOOTER.size:
        raise TruncatedPayloadError(f"{what}: missing checksum footer")
    payload, footer = raw[:-CRC_FOOTER.size], raw[-CRC_FOOTER.size:]
    expected = CRC_FOOTER.unpack(footer)[0]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if expected != actual:
        raise ChecksumMismatchError(
            f"{what}: checksum mismatch (stored {expected:#010x}, computed {actual:#010x})",
            expected=expected,
            actual=actual,
        )
    return payload


class ByteReader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, raw: bytes, what: str):
        self.raw = raw
        self.what = what
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.offset

    def take(self, size: int) -> bytes:
        if size > self.remaining:
            raise TruncatedPayloadError(
                f"{self.what}: truncated payload, needed {size} bytes at offset "
                f"{self.offset} but only {self.remaining} remain"
            )
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct) -> Tuple:
        return layout.unpack(self.take(layout.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count)


def check_preamble(reader: ByteReader, magic: bytes, version: int) -> None:
    if reader.remaining < len(magic) or reader.raw[:len(magic)] != magic:
        raise BadMagicError(f"{reader.what}: bad magic, expected {magic!r}")
    if reader.remaining < MAGIC_AND_VERSION.size:
        raise TruncatedPayloadError(f"{reader.what}: truncated header")
    _, found = reader.unpack(MAGIC_AND_VERSION)
    if found != version:
        raise VersionMismatchError(
            f"{reader.what}: unsupported version {found}, this release reads version {version}",
            version=found,
        )


def open_container(raw: bytes, magic: bytes, version: int, what: str) -> ByteReader:
    """Reader positioned just past magic and version.

    Once the magic matches and the buffer can hold a preamble plus a footer,
    the CRC is verified before any count or layer header is parsed.
    """
    if len(raw) >= MAGIC_AND_VERSION.size + CRC_FOOTER.size and raw[:len(magic)] == magic:
        verify_footer(raw, what)
    reader = ByteReader(raw, what)
    check_preamble(reader, magic, version)
    return reader
