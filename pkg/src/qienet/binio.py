"""Little-endian binary helpers shared by the file formats."""

from __future__ import annotations

import struct
from pathlib import Path

from .errors import FormatError


class Reader:
    """Cursor over a byte string; every read failure names the offset."""

    def __init__(self, data: bytes, what: str):
        self.data, self.off, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"{self.what}: truncated at offset {self.off} (need {n} bytes, {len(self.data) - self.off} left)"
            )
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        at = self.off
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.what}: invalid UTF-8 at offset {at}") from None

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r} at offset 0, expected {expected!r}")

    def finish(self) -> None:
        if self.off != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.off} trailing bytes at offset {self.off}")


def pack_string(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
