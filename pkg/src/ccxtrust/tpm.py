"""Software TPM engine.

State machine modelled on TPM 2.0 at the granularity this simulator needs:
four seed hierarchies (endorsement, storage, platform, and the added
collaborative-compute hierarchy), a 24-register PCR bank, wrapped key blobs
with version-stamped envelopes, quotes that can embed foreign TEE evidence,
credential activation, a two-phase ECDH command pair with a counter table,
PCR-policy sealing, seed rotation, and authenticated NV persistence.

Everything a TPM would derive internally is a deterministic function of the
endorsement primary seed and the command sequence, so a device manufactured
from the same seed and driven through the same commands reproduces the same
public artifacts byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

from . import crypto
from .clock import SystemClock
from .encoding import FieldReader, FieldWriter
from .errors import (
    AuthFailure,
    BlobCorrupt,
    CounterInvalid,
    DecodeError,
    EmptySelection,
    HierarchyDisabled,
    HierarchyMismatch,
    InvalidLength,
    InvalidPcrIndex,
    InvalidSeed,
    KeyDeactivated,
    KeyNotLoaded,
    NameMismatch,
    PolicyFailure,
    ReportTooLarge,
    SeedVersionMismatch,
    VersionUnsupported,
)

HIERARCHIES = ("endorsement", "storage", "platform", "cc")
PCR_COUNT = 24
PCR_SELECT_BYTES = 3
MAX_TEE_REPORT_SIZE = 4096
EPHEMERAL_TABLE_CAPACITY = 256
NV_MAGIC = b"CTPMNV01"
NV_FORMAT_VERSION = 1

KEY_TREE_MODES = ("storage", "cc")   # existing-storage scheme vs CC-hierarchy scheme

_PRIMARY_ROLES = {"endorsement": "EK", "storage": "SRK", "platform": "PPK", "cc": "CC-SRK"}

# Built-in simulated TPM manufacturer CA that endorses every EK at
# manufacture time. Fixed seed keeps EK certs reproducible across runs.
_VENDOR_CA = crypto.SigningKeyPair.from_seed(
    "OCA", crypto.sha256(b"ccxtrust-tpm-vendor-ca-v1"))


def tpm_vendor_root_pub() -> bytes:
    return _VENDOR_CA.public_bytes


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass
class SeedRecord:
    seed: bytes
    version: int
    created_at: float


class PcrBank:
    """24 SHA-256 registers plus per-register extend counts."""

    def __init__(self) -> None:
        self.registers = [b"\x00" * crypto.DIGEST_LEN for _ in range(PCR_COUNT)]
        self.extend_counts = [0] * PCR_COUNT

    def extend(self, index: int, digest: bytes) -> bytes:
        if not 0 <= index < PCR_COUNT:
            raise InvalidPcrIndex(f"pcr index {index} outside 0..{PCR_COUNT - 1}")
        if len(digest) != crypto.DIGEST_LEN:
            raise InvalidLength("extend digest must be 32 bytes")
        self.registers[index] = crypto.sha256(self.registers[index] + digest)
        self.extend_counts[index] += 1
        return self.registers[index]

    def composite(self, selection: tuple[int, ...]) -> bytes:
        return crypto.sha256(b"".join(self.registers[i] for i in selection))


def normalize_selection(selection, allow_empty: bool = False) -> tuple[int, ...]:
    sel = tuple(sorted(set(int(i) for i in selection)))
    if not sel:
        if allow_empty:
            return sel
        raise EmptySelection("pcr selection is empty")
    if sel[0] < 0 or sel[-1] >= PCR_COUNT:
        raise InvalidPcrIndex(f"pcr selection {sel} outside the bank")
    return sel


def selection_to_bitmap(selection: tuple[int, ...]) -> bytes:
    bits = 0
    for i in selection:
        bits |= 1 << i
    return bits.to_bytes(PCR_SELECT_BYTES, "little")


def bitmap_to_selection(bitmap: bytes) -> tuple[int, ...]:
    if len(bitmap) != PCR_SELECT_BYTES:
        raise DecodeError("pcr bitmap must be 3 bytes")
    bits = int.from_bytes(bitmap, "little")
    return tuple(i for i in range(PCR_COUNT) if bits & (1 << i))


_KB_ROLE, _KB_HIER, _KB_VER, _KB_PUB, _KB_PARENT, _KB_CVM, _KB_FLAG, _KB_ENV = \
    1, 2, 3, 4, 5, 6, 7, 8


@dataclass
class KeyBlob:
    """Wrapped key: public area in the clear, sensitive part AEAD-sealed
    under the parent, stamped with the hierarchy seed version it was
    created under. The envelope's aad is the public area, so any tamper of
    either half is caught at load."""

    role: str
    hierarchy: str
    seed_version: int
    public: bytes
    parent_name: bytes
    cvm_id: bytes = b""
    deactivated: bool = False
    envelope: bytes = b""

    def public_area(self) -> bytes:
        w = FieldWriter()
        w.put_str(_KB_ROLE, self.role)
        w.put_str(_KB_HIER, self.hierarchy)
        w.put_u64(_KB_VER, self.seed_version)
        w.put(_KB_PUB, self.public)
        w.put(_KB_PARENT, self.parent_name)
        w.put(_KB_CVM, self.cvm_id)
        return w.getvalue()

    @property
    def name(self) -> bytes:
        return crypto.sha256(self.public_area())

    def to_bytes(self) -> bytes:
        w = FieldWriter()
        w.put(_KB_FLAG, bytes([1 if self.deactivated else 0]))
        w.put(_KB_ENV, self.envelope)
        return self.public_area() + w.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "KeyBlob":
        r = FieldReader(raw)
        blob = cls._read_public(r)
        flag = r.take(_KB_FLAG)
        envelope = r.take(_KB_ENV)
        r.finish()
        return replace(blob, deactivated=bool(flag and flag[0]),
                       envelope=envelope)

    @classmethod
    def _read_public(cls, r: FieldReader) -> "KeyBlob":
        role = r.take_str(_KB_ROLE)
        hierarchy = r.take_str(_KB_HIER)
        version = r.take_u64(_KB_VER)
        public = r.take(_KB_PUB)
        parent = r.take(_KB_PARENT)
        cvm_id = r.take(_KB_CVM)
        return cls(role, hierarchy, version, public, parent, cvm_id)


def parse_public_area(raw: bytes) -> KeyBlob:
    """Read a bare public area, as sent to a remote party.

    The returned blob has no envelope and cannot be loaded; its value is
    that .name and .public are computed from the same bytes, which is
    what lets a challenger bind a credential to exactly the key it saw.
    """
    r = FieldReader(raw)
    blob = KeyBlob._read_public(r)
    r.finish()
    return blob


@dataclass
class LoadedKey:
    blob: KeyBlob
    scalar: int = field(repr=False, default=0)

    def keypair(self) -> crypto.SigningKeyPair:
        return crypto.SigningKeyPair(self.blob.role, self.blob.public, self.scalar)


class TpmState:
    """Mutable device state. Construct via tpm_manufacture()."""

    def __init__(self, clock=None) -> None:
        self.clock = clock if clock is not None else SystemClock()
        self.seeds: dict[str, SeedRecord] = {}
        self.hierarchy_enabled: dict[str, bool] = {h: True for h in HIERARCHIES}
        self.pcr = PcrBank()
        self.nv: dict[str, bytes] = {}
        self.loaded: dict[int, LoadedKey] = {}
        self.next_handle = 0x80000000
        self.command_counter = 0
        self.firmware_version = 1
        self.key_tree_mode = "storage"
        self.eph_seed = b""
        self.eph_table: list[int] = []
        self.eph_next = 0
        self.ek_blob: KeyBlob | None = None
        self.ek_cert: crypto.Certificate | None = None

    def tick(self) -> int:
        self.command_counter += 1
        return self.command_counter


# ---------------------------------------------------------------------------
# manufacture and seed management
# ---------------------------------------------------------------------------

def tpm_manufacture(ep_seed: bytes, *, clock=None, key_tree_mode: str = "storage",
                    firmware_version: int = 1) -> TpmState:
    """Build a device from its endorsement primary seed.

    Hierarchy seeds, the ephemeral-key seed, and the EK all derive from
    ep_seed; the built-in manufacturer CA endorses the EK. PCRs start at
    zero and every seed is at version 1.
    """
    if not crypto.SECRET_MIN <= len(ep_seed) <= crypto.SECRET_MAX:
        raise InvalidSeed("ep_seed must be 16-64 bytes")
    if key_tree_mode not in KEY_TREE_MODES:
        raise HierarchyMismatch(f"unknown key tree mode {key_tree_mode!r}")
    state = TpmState(clock=clock)
    state.key_tree_mode = key_tree_mode
    state.firmware_version = firmware_version
    now = state.clock.now()
    for h in HIERARCHIES:
        seed = crypto.kdf_counter(ep_seed, f"SEED/{h.upper()}")
        state.seeds[h] = SeedRecord(seed, 1, now)
    state.eph_seed = crypto.kdf_counter(ep_seed, "SEED/EPHEMERAL")
    state.ek_blob = create_primary(state, "endorsement")
    serial = struct.unpack("<Q", crypto.sha256(b"ek-serial:" + state.ek_blob.public)[:8])[0]
    state.ek_cert = crypto.issue_certificate(_VENDOR_CA, "EK", serial, state.ek_blob.public)
    state.nv["cert/ek"] = state.ek_cert.to_bytes()
    return state


def rotate_seed(state: TpmState, hierarchy: str) -> int:
    """Bump the hierarchy seed version and re-derive its seed.

    Every blob stamped with an older version becomes unloadable; there is
    no path back to a previous (seed, version) pair.
    """
    record = _hierarchy(state, hierarchy)
    state.tick()
    new_version = record.version + 1
    record.seed = crypto.kdf_counter(record.seed, "SEED-ROTATE",
                                     struct.pack("<Q", new_version))
    record.version = new_version
    record.created_at = state.clock.now()
    return new_version


def _hierarchy(state: TpmState, hierarchy: str) -> SeedRecord:
    if hierarchy not in HIERARCHIES:
        raise HierarchyMismatch(f"unknown hierarchy {hierarchy!r}")
    if not state.hierarchy_enabled[hierarchy]:
        raise HierarchyDisabled(f"{hierarchy} hierarchy is disabled")
    return state.seeds[hierarchy]


def _seed_parent_name(hierarchy: str) -> bytes:
    return crypto.sha256(b"hierarchy:" + hierarchy.encode())


# ---------------------------------------------------------------------------
# key creation, loading, envelopes
# ---------------------------------------------------------------------------

def _wrap_blob(env_key: bytes, scalar: int, blob: KeyBlob) -> None:
    sensitive = scalar.to_bytes(32, "big")
    blob.envelope = crypto.wrap(env_key, sensitive, blob.public_area())


def _seed_env_key(record: SeedRecord) -> bytes:
    return crypto.kdf_counter(record.seed, "ENVELOPE")


def _scalar_env_key(scalar: int) -> bytes:
    return crypto.kdf_counter(scalar.to_bytes(32, "big"), "ENVELOPE")


def create_primary(state: TpmState, hierarchy: str) -> KeyBlob:
    """Primary key of a hierarchy: a pure function of the current seed,
    so re-creating it without a rotation reproduces the identical blob."""
    record = _hierarchy(state, hierarchy)
    state.tick()
    scalar = crypto.scalar_from_material(
        crypto.kdf_counter(record.seed, "PRIMARY"))
    blob = KeyBlob(
        role=_PRIMARY_ROLES[hierarchy],
        hierarchy=hierarchy,
        seed_version=record.version,
        public=crypto.public_from_scalar(scalar),
        parent_name=_seed_parent_name(hierarchy),
    )
    _wrap_blob(_seed_env_key(record), scalar, blob)
    return blob


def create_signing_key(state: TpmState, parent_handle: int, role: str = "AIK") -> KeyBlob:
    """Child signing key under a loaded parent. Distinct per command
    counter value, reproducible for the same command sequence."""
    parent = _loaded(state, parent_handle)
    seq = state.tick()
    record = _hierarchy(state, parent.blob.hierarchy)
    material = crypto.kdf_counter(
        parent.scalar.to_bytes(32, "big"), f"CHILD/{role}", struct.pack("<Q", seq))
    scalar = crypto.scalar_from_material(material)
    blob = KeyBlob(
        role=role,
        hierarchy=parent.blob.hierarchy,
        seed_version=record.version,
        public=crypto.public_from_scalar(scalar),
        parent_name=parent.blob.name,
        cvm_id=parent.blob.cvm_id,
    )
    _wrap_blob(_scalar_env_key(parent.scalar), scalar, blob)
    return blob


def create_cvm_root_key(state: TpmState, master_secret: crypto.Secret | bytes,
                        owner_srk_handle: int, cvm_id: bytes = b"") -> KeyBlob:
    """Storage root key for one confidential VM, derived from its
    MasterSecret and wrapped under the owner storage root.

    The parent must be the primary of the scheme's hierarchy: the storage
    primary in the existing-storage mode, the CC primary in CC mode.
    """
    parent = _loaded(state, owner_srk_handle)
    want = "storage" if state.key_tree_mode == "storage" else "cc"
    if parent.blob.hierarchy != want or parent.blob.parent_name != _seed_parent_name(want):
        raise HierarchyMismatch(
            f"CVM root must hang off the {want} primary, got a "
            f"{parent.blob.role} under {parent.blob.hierarchy}")
    record = _hierarchy(state, want)
    state.tick()
    ms = master_secret.data if isinstance(master_secret, crypto.Secret) else master_secret
    scalar = crypto.scalar_from_material(
        crypto.kdf_counter(ms, "CVM-SRK", parent.blob.name))
    blob = KeyBlob(
        role="CVM-SRK",
        hierarchy=want,
        seed_version=record.version,
        public=crypto.public_from_scalar(scalar),
        parent_name=parent.blob.name,
        cvm_id=cvm_id,
    )
    _wrap_blob(_scalar_env_key(parent.scalar), scalar, blob)
    return blob


def create_cvm_key(state: TpmState, cvm_id: bytes) -> crypto.Secret:
    """CC-hierarchy MasterSecret for one CVM, recorded in NV.

    Derived from the CC hierarchy's primary master secret, so it never
    leaves the device in this mode.
    """
    if not cvm_id:
        raise InvalidLength("cvm id must be non-empty")
    record = _hierarchy(state, "cc")
    state.tick()
    ms = crypto.Secret(crypto.kdf_counter(record.seed, "CVM-MS", cvm_id))
    state.nv[_cvm_nv_key(cvm_id)] = ms.data
    return ms


def _cvm_nv_key(cvm_id: bytes) -> str:
    return f"cc/cvm/{cvm_id.hex()}"


def deactivate_cvm(state: TpmState, cvm_id: bytes = b"",
                   srk_handle: int | None = None) -> None:
    """Tear down a CVM's key subtree, per the active key-tree mode.

    CC mode deletes the MasterSecret NV entry, which kills every blob in
    the subtree at load time. Existing-storage mode can only evict the
    CVM root handle and flag its blob; children already wrapped under it
    stay loadable, which is exactly the residual-dependency weakness the
    CC hierarchy exists to fix.
    """
    state.tick()
    if state.key_tree_mode == "cc":
        state.nv.pop(_cvm_nv_key(cvm_id), None)
        for handle in [h for h, e in state.loaded.items()
                       if e.blob.cvm_id == cvm_id and cvm_id]:
            del state.loaded[handle]
        return
    if srk_handle is not None and srk_handle in state.loaded:
        entry = state.loaded.pop(srk_handle)
        entry.blob.deactivated = True


def load_key(state: TpmState, blob: KeyBlob) -> int:
    """Check version and subtree liveness, unwrap the envelope under the
    parent chain, and place the key in the loaded-object table."""
    record = _hierarchy(state, blob.hierarchy)
    state.tick()
    if blob.seed_version != record.version:
        raise SeedVersionMismatch(
            f"blob sealed under seed v{blob.seed_version}, current v{record.version}")
    if blob.deactivated:
        raise KeyDeactivated("blob is flagged deactivated")
    if blob.cvm_id and state.key_tree_mode == "cc" \
            and _cvm_nv_key(blob.cvm_id) not in state.nv:
        raise KeyDeactivated("CVM master secret has been deleted")
    if blob.parent_name == _seed_parent_name(blob.hierarchy):
        env_key = _seed_env_key(record)
    else:
        parent = _find_loaded_by_name(state, blob.parent_name)
        if parent is None:
            raise KeyNotLoaded("parent key is not loaded")
        env_key = _scalar_env_key(parent.scalar)
    try:
        sensitive = crypto.channel_open(env_key, blob.envelope, blob.public_area())
    except AuthFailure as exc:
        raise BlobCorrupt("envelope failed integrity verification") from exc
    scalar = int.from_bytes(sensitive, "big")
    handle = state.next_handle
    state.next_handle += 1
    state.loaded[handle] = LoadedKey(blob, scalar)
    return handle


def flush_key(state: TpmState, handle: int) -> None:
    state.tick()
    state.loaded.pop(handle, None)


def loaded_keypair(state: TpmState, handle: int) -> crypto.SigningKeyPair:
    """Simulator introspection: the keypair behind a loaded handle."""
    return _loaded(state, handle).keypair()


def _loaded(state: TpmState, handle: int) -> LoadedKey:
    entry = state.loaded.get(handle)
    if entry is None:
        raise KeyNotLoaded(f"handle 0x{handle:08x} is not loaded")
    return entry


def _find_loaded_by_name(state: TpmState, name: bytes) -> LoadedKey | None:
    for entry in state.loaded.values():
        if entry.blob.name == name:
            return entry
    return None


# ---------------------------------------------------------------------------
# PCRs and quotes
# ---------------------------------------------------------------------------

def pcr_extend(state: TpmState, index: int, digest: bytes) -> bytes:
    state.tick()
    return state.pcr.extend(index, digest)


def pcr_read(state: TpmState, index: int) -> bytes:
    if not 0 <= index < PCR_COUNT:
        raise InvalidPcrIndex(f"pcr index {index} outside the bank")
    return state.pcr.registers[index]


_QT_SEL, _QT_DIGEST, _QT_QUAL, _QT_REPORT, _QT_FW, _QT_CLOCK, _QT_SIG = \
    1, 2, 3, 4, 5, 6, 7


@dataclass(frozen=True)
class CompositeQuote:
    """Signed PCR quote, optionally embedding a TEE report verbatim.

    An empty tee_report means a plain quote. The signature covers every
    field above it, embedded report included, which is what makes the
    composite binding non-spliceable.
    """

    pcr_selection: tuple[int, ...]
    pcr_digest: bytes
    qualifying_data: bytes
    tee_report: bytes
    firmware_version: int
    clock_info: int
    signature: bytes

    def body_bytes(self) -> bytes:
        w = FieldWriter()
        w.put(_QT_SEL, selection_to_bitmap(self.pcr_selection))
        w.put(_QT_DIGEST, self.pcr_digest)
        w.put(_QT_QUAL, self.qualifying_data)
        w.put(_QT_REPORT, self.tee_report)
        w.put_u64(_QT_FW, self.firmware_version)
        w.put_u64(_QT_CLOCK, self.clock_info)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.body_bytes() + FieldWriter().put(_QT_SIG, self.signature).getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CompositeQuote":
        r = FieldReader(raw)
        selection = bitmap_to_selection(r.take(_QT_SEL))
        digest = r.take(_QT_DIGEST)
        qual = r.take(_QT_QUAL)
        report = r.take(_QT_REPORT)
        fw = r.take_u64(_QT_FW)
        clock_info = r.take_u64(_QT_CLOCK)
        sig = r.take(_QT_SIG)
        r.finish()
        if len(digest) != crypto.DIGEST_LEN or len(qual) != crypto.DIGEST_LEN:
            raise DecodeError("quote digest fields must be 32 bytes")
        if len(report) > MAX_TEE_REPORT_SIZE:
            raise DecodeError("embedded report exceeds the format limit")
        return cls(selection, digest, qual, report, fw, clock_info, sig)

    @property
    def digest(self) -> bytes:
        return crypto.sha256(self.to_bytes())

    def verify(self, aik_pub: bytes) -> bool:
        return crypto.verify(aik_pub, self.body_bytes(), self.signature)


def quote(state: TpmState, selection, qualifying_data: bytes,
          aik_handle: int) -> CompositeQuote:
    """Plain PCR quote signed by a loaded attestation key."""
    return cc_quote(state, selection, qualifying_data, aik_handle, b"")


def cc_quote(state: TpmState, selection, qualifying_data: bytes,
             aik_handle: int, tee_report: bytes) -> CompositeQuote:
    """Composite quote: the TEE report bytes are embedded verbatim and
    covered by the AIK signature."""
    sel = normalize_selection(selection)
    if len(qualifying_data) != crypto.DIGEST_LEN:
        raise InvalidLength("qualifying data must be 32 bytes")
    if len(tee_report) > MAX_TEE_REPORT_SIZE:
        raise ReportTooLarge(
            f"report is {len(tee_report)} bytes, limit {MAX_TEE_REPORT_SIZE}")
    aik = _loaded(state, aik_handle)
    if aik.blob.role not in ("AIK", "signing"):
        raise HierarchyMismatch(f"{aik.blob.role} key cannot quote")
    clock_info = state.tick()
    unsigned = CompositeQuote(sel, state.pcr.composite(sel), qualifying_data,
                              tee_report, state.firmware_version, clock_info, b"")
    sig = aik.keypair().sign(unsigned.body_bytes())
    return CompositeQuote(sel, unsigned.pcr_digest, qualifying_data, tee_report,
                          state.firmware_version, clock_info, sig)


# ---------------------------------------------------------------------------
# credential activation
# ---------------------------------------------------------------------------

_CR_NAME, _CR_EPH, _CR_CT = 1, 2, 3


@dataclass(frozen=True)
class Credential:
    """MakeCredential output: the secret is recoverable only with the EK
    private key, and only for the named AIK."""

    aik_name: bytes
    eph_pub: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        w = FieldWriter()
        w.put(_CR_NAME, self.aik_name)
        w.put(_CR_EPH, self.eph_pub)
        w.put(_CR_CT, self.ciphertext)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Credential":
        r = FieldReader(raw)
        name = r.take(_CR_NAME)
        eph = r.take(_CR_EPH)
        ct = r.take(_CR_CT)
        r.finish()
        return cls(name, eph, ct)


def make_credential(secret: crypto.Secret, aik_name: bytes, ek_pub: bytes,
                    rng) -> Credential:
    """Seal a secret to (EK, AIK name) via ephemeral ECDH against the EK."""
    if len(aik_name) != crypto.DIGEST_LEN:
        raise InvalidLength("aik name must be a 32-byte digest")
    eph = crypto.SigningKeyPair.generate("EK", rng)
    z = crypto.ecdh_shared(eph.scalar, ek_pub)
    key = crypto.kdf_counter(z, "CREDENTIAL", eph.public_bytes + aik_name)
    ct = crypto.wrap(key, secret.data, aik_name)
    return Credential(aik_name, eph.public_bytes, ct)


def activate_credential(cred: Credential, aik_name: bytes,
                        ek_priv: crypto.SigningKeyPair) -> crypto.Secret:
    """Recover the sealed secret; proves joint possession of EK and AIK."""
    if cred.aik_name != aik_name:
        raise NameMismatch("credential was made for a different key name")
    z = crypto.ecdh_shared(ek_priv.scalar, cred.eph_pub)
    key = crypto.kdf_counter(z, "CREDENTIAL", cred.eph_pub + aik_name)
    return crypto.Secret(crypto.channel_open(key, cred.ciphertext, aik_name))


# ---------------------------------------------------------------------------
# two-phase ECDH commands
# ---------------------------------------------------------------------------

def ec_ephemeral(state: TpmState) -> tuple[bytes, int]:
    """Issue an ephemeral public point plus its counter.

    The scalar is never stored: it is re-derived from the device ephemeral
    seed and the counter when the second phase runs. The outstanding table
    holds at most EPHEMERAL_TABLE_CAPACITY counters, FIFO-evicted.
    """
    state.tick()
    counter = state.eph_next
    state.eph_next += 1
    state.eph_table.append(counter)
    if len(state.eph_table) > EPHEMERAL_TABLE_CAPACITY:
        state.eph_table.pop(0)
    return crypto.public_from_scalar(_eph_scalar(state, counter)), counter


def zgen_2phase(state: TpmState, counter: int, own_static: crypto.SigningKeyPair,
                peer_static_pub: bytes, peer_eph_pub: bytes) -> bytes:
    """Finish the two-phase exchange for a previously issued counter.

    The counter is single-use: consumed here, and invalid if it was
    evicted or never issued.
    """
    state.tick()
    if counter not in state.eph_table:
        raise CounterInvalid(f"ephemeral counter {counter} not outstanding")
    state.eph_table.remove(counter)
    scalar = _eph_scalar(state, counter)
    eph = crypto.SigningKeyPair("EK", crypto.public_from_scalar(scalar), scalar)
    return crypto.ecdh_two_phase(own_static, peer_static_pub, eph, peer_eph_pub)


def _eph_scalar(state: TpmState, counter: int) -> int:
    material = crypto.kdf_counter(state.eph_seed, "ECDH-EPHEM",
                                  struct.pack("<Q", counter))
    return crypto.scalar_from_material(material)


# ---------------------------------------------------------------------------
# sealing
# ---------------------------------------------------------------------------

_SB_SEL, _SB_POLICY, _SB_CT = 1, 2, 3

_EMPTY_POLICY = b"\x00" * crypto.DIGEST_LEN


@dataclass(frozen=True)
class SealedBlob:
    selection: tuple[int, ...]
    policy_digest: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        w = FieldWriter()
        w.put(_SB_SEL, selection_to_bitmap(self.selection))
        w.put(_SB_POLICY, self.policy_digest)
        w.put(_SB_CT, self.ciphertext)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBlob":
        r = FieldReader(raw)
        sel = bitmap_to_selection(r.take(_SB_SEL))
        policy = r.take(_SB_POLICY)
        ct = r.take(_SB_CT)
        r.finish()
        return cls(sel, policy, ct)


def seal(state: TpmState, data: bytes, selection) -> SealedBlob:
    """Seal data to the current values of the selected PCRs.

    An empty selection is an empty policy: the blob unseals regardless of
    PCR state. The policy digest is bound into both the key derivation and
    the aad, so a doctored policy fails authentication rather than
    unlocking anything.
    """
    sel = normalize_selection(selection, allow_empty=True)
    record = _hierarchy(state, "storage")
    state.tick()
    policy = state.pcr.composite(sel) if sel else _EMPTY_POLICY
    aad = selection_to_bitmap(sel) + policy
    key = crypto.kdf_counter(record.seed, "SEAL", aad)
    return SealedBlob(sel, policy, crypto.wrap(key, data, aad))


def unseal(state: TpmState, blob: SealedBlob) -> bytes:
    """Release sealed data iff the selected PCRs match the sealing policy."""
    record = _hierarchy(state, "storage")
    state.tick()
    current = state.pcr.composite(blob.selection) if blob.selection else _EMPTY_POLICY
    if current != blob.policy_digest:
        raise PolicyFailure("current PCR composite does not satisfy the policy")
    aad = selection_to_bitmap(blob.selection) + blob.policy_digest
    key = crypto.kdf_counter(record.seed, "SEAL", aad)
    return crypto.channel_open(key, blob.ciphertext, aad)


# ---------------------------------------------------------------------------
# NV persistence
# ---------------------------------------------------------------------------

_NV_MODE, _NV_FW, _NV_COUNTER, _NV_HANDLE = 1, 2, 3, 4
_NV_HIER, _NV_PCRS, _NV_COUNTS, _NV_STORE = 5, 6, 7, 8
_NV_EPH_SEED, _NV_EPH_NEXT, _NV_EPH_TABLE, _NV_LOADED, _NV_EK = 9, 10, 11, 12, 13


def nv_persist(state: TpmState, protection_key: bytes, rng=None) -> bytes:
    """Serialize the device under an authenticated envelope.

    Layout: magic, u16 format version, then AES-GCM ciphertext of the
    canonical state encoding with the header as aad.
    """
    if rng is None:
        rng = crypto.SystemRng()
    header = NV_MAGIC + struct.pack("<H", NV_FORMAT_VERSION)
    body = crypto.channel_seal(protection_key, _encode_state(state), header, rng)
    return header + body


def nv_load(raw: bytes, protection_key: bytes, clock=None) -> TpmState:
    """Restore a device image. Tamper anywhere fails authentication."""
    header_len = len(NV_MAGIC) + 2
    if len(raw) < header_len or raw[:len(NV_MAGIC)] != NV_MAGIC:
        raise VersionUnsupported("not a TPM NV image")
    version = struct.unpack("<H", raw[len(NV_MAGIC):header_len])[0]
    if version != NV_FORMAT_VERSION:
        raise VersionUnsupported(f"NV format version {version} not supported")
    header = raw[:header_len]
    plain = crypto.channel_open(protection_key, raw[header_len:], header)
    return _decode_state(plain, clock)


def _encode_state(state: TpmState) -> bytes:
    w = FieldWriter()
    w.put_str(_NV_MODE, state.key_tree_mode)
    w.put_u64(_NV_FW, state.firmware_version)
    w.put_u64(_NV_COUNTER, state.command_counter)
    w.put_u64(_NV_HANDLE, state.next_handle)
    for h in HIERARCHIES:
        rec = state.seeds[h]
        hw = FieldWriter()
        hw.put_str(1, h)
        hw.put(2, rec.seed)
        hw.put_u64(3, rec.version)
        hw.put(4, struct.pack("<d", rec.created_at))
        hw.put(5, bytes([1 if state.hierarchy_enabled[h] else 0]))
        w.put(_NV_HIER, hw.getvalue())
    w.put(_NV_PCRS, b"".join(state.pcr.registers))
    w.put(_NV_COUNTS, struct.pack(f"<{PCR_COUNT}Q", *state.pcr.extend_counts))
    for key in sorted(state.nv):
        ew = FieldWriter()
        ew.put_str(1, key)
        ew.put(2, state.nv[key])
        w.put(_NV_STORE, ew.getvalue())
    w.put(_NV_EPH_SEED, state.eph_seed)
    w.put_u64(_NV_EPH_NEXT, state.eph_next)
    w.put(_NV_EPH_TABLE, struct.pack(f"<{len(state.eph_table)}Q", *state.eph_table))
    for handle in sorted(state.loaded):
        entry = state.loaded[handle]
        lw = FieldWriter()
        lw.put_u64(1, handle)
        lw.put(2, entry.blob.to_bytes())
        lw.put(3, entry.scalar.to_bytes(32, "big"))
        w.put(_NV_LOADED, lw.getvalue())
    w.put(_NV_EK, (state.ek_blob.to_bytes() if state.ek_blob else b""))
    return w.getvalue()


def _decode_state(raw: bytes, clock=None) -> TpmState:
    state = TpmState(clock=clock)
    r = FieldReader(raw)
    state.key_tree_mode = r.take_str(_NV_MODE)
    state.firmware_version = r.take_u64(_NV_FW)
    state.command_counter = r.take_u64(_NV_COUNTER)
    state.next_handle = r.take_u64(_NV_HANDLE)
    for _ in HIERARCHIES:
        hr = FieldReader(r.take(_NV_HIER))
        name = hr.take_str(1)
        seed = hr.take(2)
        version = hr.take_u64(3)
        created = struct.unpack("<d", hr.take(4))[0]
        enabled = hr.take(5)
        hr.finish()
        state.seeds[name] = SeedRecord(seed, version, created)
        state.hierarchy_enabled[name] = bool(enabled[0])
    pcrs = r.take(_NV_PCRS)
    state.pcr.registers = [pcrs[i:i + 32] for i in range(0, PCR_COUNT * 32, 32)]
    state.pcr.extend_counts = list(struct.unpack(f"<{PCR_COUNT}Q", r.take(_NV_COUNTS)))
    state.nv = {}
    state.loaded = {}
    state.eph_seed = b""
    while not r.exhausted:
        # remaining fields appear in encode order; store entries repeat
        pos_tag = r.peek_tag()
        if pos_tag == _NV_STORE:
            er = FieldReader(r.take(_NV_STORE))
            key = er.take_str(1)
            state.nv[key] = er.take(2)
            er.finish()
        elif pos_tag == _NV_EPH_SEED:
            state.eph_seed = r.take(_NV_EPH_SEED)
        elif pos_tag == _NV_EPH_NEXT:
            state.eph_next = r.take_u64(_NV_EPH_NEXT)
        elif pos_tag == _NV_EPH_TABLE:
            packed = r.take(_NV_EPH_TABLE)
            state.eph_table = list(struct.unpack(f"<{len(packed) // 8}Q", packed))
        elif pos_tag == _NV_LOADED:
            lr = FieldReader(r.take(_NV_LOADED))
            handle = lr.take_u64(1)
            blob = KeyBlob.from_bytes(lr.take(2))
            scalar = int.from_bytes(lr.take(3), "big")
            lr.finish()
            state.loaded[handle] = LoadedKey(blob, scalar)
        elif pos_tag == _NV_EK:
            ek_raw = r.take(_NV_EK)
            state.ek_blob = KeyBlob.from_bytes(ek_raw) if ek_raw else None
        else:
            raise DecodeError(f"unexpected field 0x{pos_tag:04x} in NV image")
    if "cert/ek" in state.nv:
        state.ek_cert = crypto.Certificate.from_bytes(state.nv["cert/ek"])
    return state
