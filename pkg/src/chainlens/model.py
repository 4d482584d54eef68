"""Core chain types, script classification and canonical address identity."""

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional

from . import wire
from .errors import MalformedTransaction, NegativeFee

_HEADER = struct.Struct("<i32s32sIII")
HEADER_SIZE = _HEADER.size  # 80

OP_0 = 0x00
OP_1 = 0x51
OP_16 = 0x60
OP_RETURN = 0x6A
OP_DUP = 0x76
OP_EQUAL = 0x87
OP_EQUALVERIFY = 0x88
OP_HASH160 = 0xA9
OP_CHECKSIG = 0xAC
OP_CHECKMULTISIG = 0xAE


class ScriptClass(enum.IntEnum):
    PayToPubkey = 0
    PayToPubkeyHash = 1
    PayToScriptHash = 2
    Multisig = 3
    NonStandard = 4

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "ScriptClass":
        try:
            return _LABEL_CLASSES[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown script class {text!r}") from None


_CLASS_LABELS = {
    ScriptClass.PayToPubkey: "p2pk",
    ScriptClass.PayToPubkeyHash: "p2pkh",
    ScriptClass.PayToScriptHash: "p2sh",
    ScriptClass.Multisig: "multisig",
    ScriptClass.NonStandard: "nonstandard",
}
_LABEL_CLASSES = {v: k for k, v in _CLASS_LABELS.items()}
_LABEL_CLASSES.update({c.name.lower(): c for c in ScriptClass})


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_block_hash: bytes
    merkle_root: bytes
    time: int
    bits: int
    nonce: int

    def serialize(self) -> bytes:
        return _HEADER.pack(self.version, self.prev_block_hash, self.merkle_root,
                            self.time, self.bits, self.nonce)

    @classmethod
    def parse(cls, data, offset: int = 0) -> "BlockHeader":
        return cls(*_HEADER.unpack_from(data, offset))

    @property
    def hash(self) -> bytes:
        """Block hash in internal (little-endian) byte order."""
        return wire.sha256d(self.serialize())

    @property
    def hash_hex(self) -> str:
        return wire.hash_to_hex(self.hash)


@dataclass(frozen=True)
class AddressKey:
    kind: ScriptClass
    payload: bytes

    def __str__(self):
        return f"{self.kind.label}:{self.payload.hex()}"


@dataclass
class TxOutput:
    output_id: int
    value: int
    script: bytes
    script_class: ScriptClass
    address_id: Optional[int] = None


@dataclass
class TxInput:
    input_id: int
    spent_output_id: Optional[int] = None
    resolved_value: int = 0
    resolved_address_id: Optional[int] = None


@dataclass
class Transaction:
    tx_id: int
    tx_hash: bytes
    block_id: int
    index_in_block: int
    timestamp: int
    is_coinbase: bool
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    fee: int = 0

    @property
    def hash_hex(self) -> str:
        return wire.hash_to_hex(self.tx_hash)


def _pubkey_push(script, i):
    """Length of a 33/65-byte direct push at ``i``, else 0."""
    n = script[i] if i < len(script) else 0
    if n in (33, 65) and i + 1 + n <= len(script):
        return n
    return 0


def classify_script(script: bytes) -> ScriptClass:
    s = bytes(script)
    n = len(s)
    if n == 25 and s[0] == OP_DUP and s[1] == OP_HASH160 and s[2] == 20 \
            and s[23] == OP_EQUALVERIFY and s[24] == OP_CHECKSIG:
        return ScriptClass.PayToPubkeyHash
    if n == 23 and s[0] == OP_HASH160 and s[1] == 20 and s[22] == OP_EQUAL:
        return ScriptClass.PayToScriptHash
    if n in (35, 67) and s[0] == n - 2 and s[-1] == OP_CHECKSIG:
        return ScriptClass.PayToPubkey
    if n >= 3 and s[-1] == OP_CHECKMULTISIG and OP_1 <= s[0] <= OP_16 and OP_1 <= s[-2] <= OP_16:
        m = s[0] - OP_1 + 1
        expected = s[-2] - OP_1 + 1
        i, keys = 1, 0
        while i < n - 2:
            k = _pubkey_push(s, i)
            if not k:
                break
            i += 1 + k
            keys += 1
        if i == n - 2 and keys == expected and 1 <= m <= expected:
            return ScriptClass.Multisig
    return ScriptClass.NonStandard


def _witness_program(s: bytes):
    """``(version, program)`` for a segwit output script, else None."""
    if 4 <= len(s) <= 42 and (s[0] == OP_0 or OP_1 <= s[0] <= OP_16) and s[1] + 2 == len(s):
        version = 0 if s[0] == OP_0 else s[0] - OP_1 + 1
        return version, s[2:]
    return None


def script_to_address(script: bytes, script_class: Optional[ScriptClass] = None) -> Optional[AddressKey]:
    """Canonical identity of whoever can spend ``script``.

    Pay-to-pubkey outputs (and v0 witness key hashes) fold into the
    pay-to-pubkey-hash space so one key is one address. Other witness programs
    land in the NonStandard space keyed by version byte plus program.
    """
    s = bytes(script)
    if script_class is None:
        script_class = classify_script(s)
    if script_class == ScriptClass.PayToPubkeyHash:
        return AddressKey(ScriptClass.PayToPubkeyHash, s[3:23])
    if script_class == ScriptClass.PayToPubkey:
        return AddressKey(ScriptClass.PayToPubkeyHash, wire.hash160(s[1:-1]))
    if script_class == ScriptClass.PayToScriptHash:
        return AddressKey(ScriptClass.PayToScriptHash, s[2:22])
    if script_class == ScriptClass.Multisig:
        return AddressKey(ScriptClass.Multisig, wire.hash160(s))
    prog = _witness_program(s)
    if prog is None:
        return None
    version, program = prog
    if version == 0 and len(program) == 20:
        return AddressKey(ScriptClass.PayToPubkeyHash, program)
    return AddressKey(ScriptClass.NonStandard, bytes((version,)) + program)


def compute_txid(raw_tx: bytes) -> bytes:
    tx, end = wire.parse_tx(raw_tx, 0)
    if end != len(raw_tx):
        raise MalformedTransaction(f"{len(raw_tx) - end} trailing bytes after transaction")
    return tx.txid


def compute_fee(tx: Transaction) -> int:
    if tx.is_coinbase:
        return 0
    fee = sum(i.resolved_value for i in tx.inputs) - sum(o.value for o in tx.outputs)
    if fee < 0:
        raise NegativeFee(f"transaction {tx.hash_hex} spends {-fee} sat more than its inputs")
    return fee


def p2pkh_script(h160: bytes) -> bytes:
    return bytes((OP_DUP, OP_HASH160, 20)) + h160 + bytes((OP_EQUALVERIFY, OP_CHECKSIG))


def p2pk_script(pubkey: bytes) -> bytes:
    return bytes((len(pubkey),)) + pubkey + bytes((OP_CHECKSIG,))


def p2sh_script(h160: bytes) -> bytes:
    return bytes((OP_HASH160, 20)) + h160 + bytes((OP_EQUAL,))


def multisig_script(m: int, pubkeys) -> bytes:
    body = b"".join(bytes((len(k),)) + k for k in pubkeys)
    return bytes((OP_1 + m - 1,)) + body + bytes((OP_1 + len(pubkeys) - 1, OP_CHECKMULTISIG))
