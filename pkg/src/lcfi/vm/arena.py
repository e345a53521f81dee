"""Flat little-endian memory with bump allocation.

Addresses are plain integers. 0 is the null pointer and never mapped; stream
handles live below `base` so dereferencing one traps like any wild pointer.
Stack discipline comes from mark/release: a frame snapshots the top on entry
and rolls back on return. Bounds are checked on access, not at pointer
arithmetic, so a getelementptr may wander as long as it is never dereferenced.
"""

from __future__ import annotations

import struct


class OutOfBounds(Exception):
    def __init__(self, addr: int, size: int, message: str = ""):
        self.addr = addr
        self.size = size
        super().__init__(message or f"access of {size} byte(s) at 0x{addr:x}")


class MemoryArena:
    def __init__(self, base: int = 0x1000, capacity: int = 1 << 26):
        self.base = base
        self.top = base
        self.capacity = capacity
        self._mem = bytearray()

    def alloc(self, size: int, align: int = 8) -> int:
        size = max(1, int(size))
        align = max(1, int(align))
        addr = (self.top + align - 1) // align * align
        new_top = addr + size
        if new_top - self.base > self.capacity:
            raise OutOfBounds(addr, size, f"allocation of {size} bytes exceeds arena capacity")
        # scrub any reused stack region so re-allocation is deterministic
        lo = self.top - self.base
        hi = min(new_top - self.base, len(self._mem))
        if hi > lo:
            self._mem[lo:hi] = b"\x00" * (hi - lo)
        if new_top - self.base > len(self._mem):
            self._mem.extend(b"\x00" * (new_top - self.base - len(self._mem)))
        self.top = new_top
        return addr

    def mark(self) -> int:
        return self.top

    def release(self, mark: int) -> None:
        self.top = mark

    def _check(self, addr: int, size: int) -> None:
        if addr < self.base or addr + size > self.top:
            raise OutOfBounds(addr, size)

    def load_bytes(self, addr: int, size: int) -> bytes:
        self._check(addr, size)
        off = addr - self.base
        return bytes(self._mem[off:off + size])

    def store_bytes(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        off = addr - self.base
        self._mem[off:off + len(data)] = data

    def load_int(self, addr: int, bits: int, signed: bool = True) -> int:
        raw = self.load_bytes(addr, bits // 8)
        return int.from_bytes(raw, "little", signed=signed)

    def store_int(self, addr: int, value: int, bits: int) -> None:
        mask = (1 << bits) - 1
        self.store_bytes(addr, (value & mask).to_bytes(bits // 8, "little"))

    def load_f64(self, addr: int) -> float:
        return struct.unpack("<d", self.load_bytes(addr, 8))[0]

    def store_f64(self, addr: int, value: float) -> None:
        self.store_bytes(addr, struct.pack("<d", value))

    def load_f32(self, addr: int) -> float:
        return struct.unpack("<f", self.load_bytes(addr, 4))[0]

    def store_f32(self, addr: int, value: float) -> None:
        self.store_bytes(addr, struct.pack("<f", value))

    def read_cstring(self, addr: int, limit: int = 1 << 20) -> str:
        out = bytearray()
        a = addr
        while len(out) < limit:
            b = self.load_bytes(a, 1)[0]
            if b == 0:
                return out.decode("utf-8", errors="replace")
            out.append(b)
            a += 1
        raise OutOfBounds(addr, limit, "unterminated string")

    def write_cstring(self, addr: int, text: str) -> None:
        self.store_bytes(addr, text.encode("utf-8") + b"\x00")
