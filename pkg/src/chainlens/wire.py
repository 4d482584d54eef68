"""Bitcoin consensus serialization: varints, transactions, hashing."""

import hashlib
import struct
from typing import NamedTuple

from .errors import MalformedTransaction

_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_U64 = struct.Struct("<Q")

NULL_HASH = bytes(32)
COINBASE_INDEX = 0xFFFFFFFF


def sha256d(data) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


try:
    hashlib.new("ripemd160")

    def _ripemd160(data) -> bytes:
        return hashlib.new("ripemd160", data).digest()

except ValueError:  # OpenSSL 3 without the legacy provider
    from Crypto.Hash import RIPEMD160

    def _ripemd160(data) -> bytes:
        return RIPEMD160.new(bytes(data)).digest()


def hash160(data) -> bytes:
    """RIPEMD-160 of SHA-256."""
    return _ripemd160(hashlib.sha256(data).digest())


def hash_to_hex(h: bytes) -> str:
    """Display form: byte-reversed hex."""
    return bytes(h)[::-1].hex()


def hex_to_hash(s: str) -> bytes:
    b = bytes.fromhex(s)
    if len(b) != 32:
        raise ValueError(f"expected 32-byte hash, got {len(b)} bytes")
    return b[::-1]


def encode_varint(n: int) -> bytes:
    if n < 0xFD:
        return bytes((n,))
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + _U32.pack(n)
    return b"\xff" + _U64.pack(n)


def read_varint(buf, pos: int):
    """Return ``(value, new_pos)``. Raises IndexError/struct.error past the end."""
    first = buf[pos]
    if first < 0xFD:
        return first, pos + 1
    if first == 0xFD:
        return struct.unpack_from("<H", buf, pos + 1)[0], pos + 3
    if first == 0xFE:
        return _U32.unpack_from(buf, pos + 1)[0], pos + 5
    return _U64.unpack_from(buf, pos + 1)[0], pos + 9


def push_data(data: bytes) -> bytes:
    """Minimal script push of ``data``."""
    n = len(data)
    if n < 0x4C:
        return bytes((n,)) + data
    if n <= 0xFF:
        return b"\x4c" + bytes((n,)) + data
    if n <= 0xFFFF:
        return b"\x4d" + struct.pack("<H", n) + data
    return b"\x4e" + _U32.pack(n) + data


class TxIn(NamedTuple):
    prev_hash: bytes  # internal byte order
    prev_index: int
    script_sig: bytes
    sequence: int


class TxOut(NamedTuple):
    value: int
    script: bytes


class RawTx(NamedTuple):
    version: int
    inputs: list
    outputs: list
    locktime: int
    witnesses: list  # one list of stack items per input, or [] when absent
    size: int  # full serialized length, witness included
    txid: bytes  # sha256d of the witness-stripped form, internal order

    @property
    def is_coinbase(self) -> bool:
        return (
            len(self.inputs) == 1
            and self.inputs[0].prev_hash == NULL_HASH
            and self.inputs[0].prev_index == COINBASE_INDEX
        )


def parse_tx(buf, pos: int = 0):
    """Decode one transaction starting at ``pos``; return ``(RawTx, end)``."""
    mv = memoryview(buf)
    start = pos
    try:
        version = _I32.unpack_from(mv, pos)[0]
        pos += 4
        segwit = mv[pos] == 0 and mv[pos + 1] == 1
        if segwit:
            pos += 2
        body_start = pos
        n_in, pos = read_varint(mv, pos)
        inputs = []
        for _ in range(n_in):
            prev_hash = bytes(mv[pos:pos + 32])
            prev_index = _U32.unpack_from(mv, pos + 32)[0]
            pos += 36
            slen, pos = read_varint(mv, pos)
            script_sig = bytes(mv[pos:pos + slen])
            if len(script_sig) != slen:
                raise MalformedTransaction("script_sig runs past end of data")
            pos += slen
            sequence = _U32.unpack_from(mv, pos)[0]
            pos += 4
            inputs.append(TxIn(prev_hash, prev_index, script_sig, sequence))
        n_out, pos = read_varint(mv, pos)
        outputs = []
        for _ in range(n_out):
            value = _U64.unpack_from(mv, pos)[0]
            pos += 8
            slen, pos = read_varint(mv, pos)
            script = bytes(mv[pos:pos + slen])
            if len(script) != slen:
                raise MalformedTransaction("script_pubkey runs past end of data")
            pos += slen
            outputs.append(TxOut(value, script))
        body_end = pos
        witnesses = []
        if segwit:
            for _ in range(n_in):
                n_items, pos = read_varint(mv, pos)
                items = []
                for _ in range(n_items):
                    ilen, pos = read_varint(mv, pos)
                    item = bytes(mv[pos:pos + ilen])
                    if len(item) != ilen:
                        raise MalformedTransaction("witness item runs past end of data")
                    pos += ilen
                    items.append(item)
                witnesses.append(items)
        locktime = _U32.unpack_from(mv, pos)[0]
        pos += 4
    except (IndexError, struct.error) as exc:
        raise MalformedTransaction(f"transaction at offset {start} truncated") from exc

    if segwit:
        stripped = b"".join((
            bytes(mv[start:start + 4]),
            bytes(mv[body_start:body_end]),
            bytes(mv[pos - 4:pos]),
        ))
    else:
        stripped = mv[start:pos]
    txid = sha256d(stripped)
    return RawTx(version, inputs, outputs, locktime, witnesses, pos - start, txid), pos


def serialize_tx(version, inputs, outputs, locktime=0, witnesses=None) -> bytes:
    """Encode a transaction. ``inputs``/``outputs`` are TxIn/TxOut-like tuples."""
    parts = [_I32.pack(version)]
    if witnesses:
        parts.append(b"\x00\x01")
    parts.append(encode_varint(len(inputs)))
    for prev_hash, prev_index, script_sig, sequence in inputs:
        parts += (prev_hash, _U32.pack(prev_index), encode_varint(len(script_sig)),
                  script_sig, _U32.pack(sequence))
    parts.append(encode_varint(len(outputs)))
    for value, script in outputs:
        parts += (_U64.pack(value), encode_varint(len(script)), script)
    if witnesses:
        for items in witnesses:
            parts.append(encode_varint(len(items)))
            for item in items:
                parts += (encode_varint(len(item)), item)
    parts.append(_U32.pack(locktime))
    return b"".join(parts)


def merkle_root(txids) -> bytes:
    """Merkle root over internal-order txids (odd levels duplicate the last)."""
    level = list(txids)
    if not level:
        return NULL_HASH
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256d(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]
