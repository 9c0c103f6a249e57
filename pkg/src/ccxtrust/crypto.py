"""Cryptographic core: hashing, key derivation, signing, key agreement,
authenticated channels, certificates, and randomness.

Algorithm choices are fixed for the whole simulator: SHA-256 everywhere a
digest is needed, ECDSA over P-256 with deterministic (RFC 6979) nonces for
signatures, AES-256-GCM for authenticated encryption, and an HMAC-SHA-256
counter-mode KDF for every key derivation. Deterministic signing matters
here: a scenario replayed from the same seed must produce byte-identical
artifacts, signatures included.

Private scalars are plain integers and public keys are SEC1 compressed
points (33 bytes), so every structure that embeds a key commits to one
canonical byte form.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import threading
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)

from .encoding import FieldReader, FieldWriter
from .errors import (
    AuthFailure,
    DecodeError,
    InvalidLength,
    InvalidPoint,
    InvalidSeed,
    MalformedSignature,
)

_CURVE = ec.SECP256R1()
_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

DIGEST_LEN = 32
POINT_LEN = 33          # SEC1 compressed
AEAD_KEY_LEN = 32
AEAD_NONCE_LEN = 12
SECRET_MIN = 16
SECRET_MAX = 64


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# secrets and key derivation
# ---------------------------------------------------------------------------

class Secret:
    """Sensitive byte string, 16 to 64 bytes, with a redacted repr.

    Stored in a bytearray so wipe() can overwrite it in place. Equality is
    constant-time.
    """

    __slots__ = ("_buf",)

    def __init__(self, data: bytes) -> None:
        if not SECRET_MIN <= len(data) <= SECRET_MAX:
            raise InvalidLength(f"secret must be {SECRET_MIN}-{SECRET_MAX} bytes")
        self._buf = bytearray(data)

    @property
    def data(self) -> bytes:
        return bytes(self._buf)

    def wipe(self) -> None:
        for i in range(len(self._buf)):
            self._buf[i] = 0

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Secret):
            return hmac.compare_digest(self.data, other.data)
        return NotImplemented

    def __len__(self) -> int:
        return len(self._buf)

    def __repr__(self) -> str:
        return f"Secret(<{len(self._buf)} bytes>)"


def kdf_counter(parent: bytes | Secret, label: str, context: bytes = b"",
                out_len: int = 32) -> bytes:
    """SP 800-108 style HMAC-SHA-256 counter-mode KDF.

    Block i is HMAC(parent, be32(i) || label || 0x00 || context ||
    be32(out_bits)); blocks are concatenated and truncated to out_len.
    Distinct labels or contexts give independent keys under one parent.
    """
    key = parent.data if isinstance(parent, Secret) else parent
    if not SECRET_MIN <= len(key) <= SECRET_MAX:
        raise InvalidLength("parent key material must be 16-64 bytes")
    if not SECRET_MIN <= out_len <= SECRET_MAX:
        raise InvalidLength("derived length must be 16-64 bytes")
    if not label or not label.isascii():
        raise InvalidLength("label must be non-empty ascii")
    encoded = label.encode("ascii")
    bits = struct.pack(">I", out_len * 8)
    out = b""
    counter = 1
    while len(out) < out_len:
        msg = struct.pack(">I", counter) + encoded + b"\x00" + context + bits
        out += hmac.new(key, msg, hashlib.sha256).digest()
        counter += 1
    return out[:out_len]


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

class DeterministicRng:
    """Seeded generator producing a reproducible byte stream.

    Output block i is sha256(state || be64(i)). fork() derives an
    independent child stream, which lets concurrent actors draw from
    unrelated streams without ordering effects. This is the simulator's
    random number manager; self_test() is its health hook.
    """

    def __init__(self, seed: bytes | int) -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big", signed=False)
        if len(seed) == 0:
            raise InvalidSeed("empty seed")
        self._state = sha256(b"rng:" + seed)
        self._counter = 0
        self._lock = threading.Lock()

    def random_bytes(self, n: int) -> bytes:
        out = bytearray()
        with self._lock:
            while len(out) < n:
                out += sha256(self._state + struct.pack(">Q", self._counter))
                self._counter += 1
        return bytes(out[:n])

    def fork(self, label: str) -> "DeterministicRng":
        return DeterministicRng(sha256(self._state + b"fork:" + label.encode()))

    def self_test(self) -> bool:
        return _rng_health_check(self.fork("self-test"))


class SystemRng:
    """OS entropy. The production path; not reproducible."""

    def random_bytes(self, n: int) -> bytes:
        return os.urandom(n)

    def self_test(self) -> bool:
        return _rng_health_check(self)


def _rng_health_check(rng) -> bool:
    """Cheap sanity checks: balanced bits, no stuck or repeated blocks."""
    sample = rng.random_bytes(2048)
    ones = sum(bin(b).count("1") for b in sample)
    total = len(sample) * 8
    if not 0.45 < ones / total < 0.55:
        return False
    blocks = [sample[i:i + 32] for i in range(0, len(sample), 32)]
    return len(set(blocks)) == len(blocks)


# ---------------------------------------------------------------------------
# signing keys
# ---------------------------------------------------------------------------

def scalar_from_material(material: bytes) -> int:
    """Map derived key material to a nonzero P-256 scalar."""
    if len(material) < 16:
        raise InvalidLength("scalar material too short")
    wide = int.from_bytes(sha256(b"scalar:" + material) + sha256(material), "big")
    return wide % (_CURVE_ORDER - 1) + 1


def public_from_scalar(scalar: int) -> bytes:
    key = ec.derive_private_key(scalar, _CURVE)
    return key.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)


def load_public(point_bytes: bytes):
    """Decode a SEC1 compressed point, rejecting anything off-curve."""
    if len(point_bytes) != POINT_LEN or point_bytes[0] not in (2, 3):
        raise InvalidPoint("public key must be a 33-byte compressed point")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, point_bytes)
    except ValueError as exc:
        raise InvalidPoint("point is not on the curve") from exc


@dataclass
class SigningKeyPair:
    """P-256 keypair with a role label.

    The scalar is None for public-only halves. sign() is deterministic,
    so the same key and message always produce the same DER signature.
    """

    role: str
    public_bytes: bytes
    scalar: int | None = field(default=None, repr=False)

    @classmethod
    def generate(cls, role: str, rng) -> "SigningKeyPair":
        scalar = scalar_from_material(rng.random_bytes(32))
        return cls(role, public_from_scalar(scalar), scalar)

    @classmethod
    def from_seed(cls, role: str, material: bytes) -> "SigningKeyPair":
        scalar = scalar_from_material(material)
        return cls(role, public_from_scalar(scalar), scalar)

    @property
    def name(self) -> bytes:
        """Key name: digest of the canonical public point."""
        return sha256(self.public_bytes)

    def public_only(self) -> "SigningKeyPair":
        return SigningKeyPair(self.role, self.public_bytes)

    def sign(self, message: bytes) -> bytes:
        if self.scalar is None:
            raise InvalidSeed("public-only key cannot sign")
        key = ec.derive_private_key(self.scalar, _CURVE)
        return key.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))


def verify(public_bytes: bytes, message: bytes, signature: bytes) -> bool:
    """True when signature is valid. Malformed encodings raise instead."""
    key = load_public(public_bytes)
    try:
        decode_dss_signature(signature)
    except ValueError as exc:
        raise MalformedSignature("signature is not valid DER") from exc
    try:
        key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
        return True
    except InvalidSignature:
        return False


# ---------------------------------------------------------------------------
# key agreement
# ---------------------------------------------------------------------------

def ecdh_two_phase(static_priv: SigningKeyPair, static_peer_pub: bytes,
                   ephem_priv: SigningKeyPair, ephem_peer_pub: bytes) -> bytes:
    """Two-phase ECDH: combine static-static and ephemeral-ephemeral shares.

    The 32-byte result binds all four public points through a transcript
    digest that both sides compute identically regardless of who initiated,
    so the exchange is symmetric in party order.
    """
    if static_priv.scalar is None or ephem_priv.scalar is None:
        raise InvalidSeed("private halves required for key agreement")
    z_static = ecdh_shared(static_priv.scalar, static_peer_pub)
    z_ephem = ecdh_shared(ephem_priv.scalar, ephem_peer_pub)
    own = static_priv.public_bytes + ephem_priv.public_bytes
    peer = static_peer_pub + ephem_peer_pub
    transcript = sha256(min(own, peer) + max(own, peer))
    return kdf_counter(z_static + z_ephem, "TWO-PHASE", transcript, 32)


def ecdh_shared(scalar: int, peer_pub: bytes) -> bytes:
    peer = load_public(peer_pub)
    key = ec.derive_private_key(scalar, _CURVE)
    return key.exchange(ec.ECDH(), peer)


# ---------------------------------------------------------------------------
# authenticated channel encryption
# ---------------------------------------------------------------------------

def channel_seal(key: bytes, plaintext: bytes, aad: bytes, rng) -> bytes:
    """AES-256-GCM with a fresh random nonce, returned as nonce || ct."""
    _check_aead_key(key)
    nonce = rng.random_bytes(AEAD_NONCE_LEN)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def wrap(key: bytes, plaintext: bytes, aad: bytes) -> bytes:
    """Deterministic AEAD for at-rest envelopes.

    The nonce is derived from key, aad, and plaintext, so wrapping the
    same content twice yields identical bytes. Never reuses a nonce across
    distinct plaintexts, which is what GCM actually requires.
    """
    _check_aead_key(key)
    nonce = kdf_counter(key, "WRAP-NONCE", sha256(aad) + sha256(plaintext),
                        16)[:AEAD_NONCE_LEN]
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def channel_open(key: bytes, sealed: bytes, aad: bytes) -> bytes:
    """Open a sealed blob. Any tamper of ciphertext or aad raises AuthFailure."""
    _check_aead_key(key)
    if len(sealed) < AEAD_NONCE_LEN + 16:
        raise AuthFailure("sealed blob too short")
    nonce, ct = sealed[:AEAD_NONCE_LEN], sealed[AEAD_NONCE_LEN:]
    try:
        return AESGCM(key).decrypt(nonce, ct, aad)
    except InvalidTag as exc:
        raise AuthFailure("authenticated decryption failed") from exc


def _check_aead_key(key: bytes) -> None:
    if len(key) != AEAD_KEY_LEN:
        raise InvalidLength(f"channel key must be {AEAD_KEY_LEN} bytes")


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

ROLE_BYTES = {
    "ARK": 1, "ASK": 2, "VCEK": 3,
    "EK": 4, "AIK": 5, "PEK": 6,
    "OCA": 7, "IDENTITY": 8, "VERIFIER": 9, "PUBLISHER": 10,
}
_ROLE_NAMES = {v: k for k, v in ROLE_BYTES.items()}

_CT_ROLE, _CT_SERIAL, _CT_SUBJECT, _CT_ISSUER, _CT_SIG = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Certificate:
    """Minimal signed binding of a public key to a role.

    issuer_name is the digest of the issuer's public point; serial is
    assigned by the issuer and is what revocation lists track.
    """

    role: str
    serial: int
    subject: bytes
    issuer_name: bytes
    signature: bytes

    def body_bytes(self) -> bytes:
        w = FieldWriter()
        w.put(_CT_ROLE, bytes([ROLE_BYTES[self.role]]))
        w.put_u64(_CT_SERIAL, self.serial)
        w.put(_CT_SUBJECT, self.subject)
        w.put(_CT_ISSUER, self.issuer_name)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.body_bytes() + FieldWriter().put(_CT_SIG, self.signature).getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Certificate":
        r = FieldReader(raw)
        role_raw = r.take(_CT_ROLE)
        if len(role_raw) != 1 or role_raw[0] not in _ROLE_NAMES:
            raise DecodeError("unknown certificate role byte")
        serial = r.take_u64(_CT_SERIAL)
        subject = r.take(_CT_SUBJECT)
        issuer = r.take(_CT_ISSUER)
        if len(subject) != POINT_LEN or len(issuer) != DIGEST_LEN:
            raise DecodeError("certificate field width wrong")
        sig = r.take(_CT_SIG)
        r.finish()
        return cls(_ROLE_NAMES[role_raw[0]], serial, subject, issuer, sig)

    @property
    def digest(self) -> bytes:
        return sha256(self.to_bytes())

    def verify(self, issuer_pub: bytes) -> bool:
        if self.issuer_name != sha256(issuer_pub):
            return False
        return verify(issuer_pub, self.body_bytes(), self.signature)


def issue_certificate(issuer: SigningKeyPair, role: str, serial: int,
                      subject_pub: bytes) -> Certificate:
    if role not in ROLE_BYTES:
        raise DecodeError(f"unknown certificate role {role!r}")
    if len(subject_pub) != POINT_LEN:
        raise InvalidPoint("subject must be a 33-byte compressed point")
    issuer_name = sha256(issuer.public_bytes)
    body = FieldWriter()
    body.put(_CT_ROLE, bytes([ROLE_BYTES[role]]))
    body.put_u64(_CT_SERIAL, serial)
    body.put(_CT_SUBJECT, subject_pub)
    body.put(_CT_ISSUER, issuer_name)
    sig = issuer.sign(body.getvalue())
    return Certificate(role, serial, subject_pub, issuer_name, sig)
