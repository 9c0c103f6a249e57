"""Collaborative attestation protocol: flows, wire format, and trace model.

Principals are the platform agent (one per node), its TEE engine
("<node>/tee") and TPM ("<node>/tpm"), the owner CA ("owner-ca"), and the
verifier ("verifier"). Every message crosses an AES-GCM channel keyed by
two-phase ECDH, and every step appends a structured event to a protocol
trace.

The trace is the unit of analysis: trust-chain properties are stated
over event sequences and checked mechanically by check_theorems, so a
run either carries a complete justification for every credential that
changed hands or yields a concrete counterexample event.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from . import crypto, tee, tpm
from .encoding import FieldReader, FieldWriter
from .errors import AttestationRejected, AuthFailure, DecodeError
from .owner_ca import challenge_session_id
from .verifier import CompositeOutcome, VerifierService

OCA_PRINCIPAL = "owner-ca"
VERIFIER_PRINCIPAL = "verifier"

EVENT_KINDS = ("new", "send", "receive", "decrypt", "sign", "verify", "match")

# certificate labels whose possession the provenance property covers; the
# TEE-issued platform encryption key cert is deliberately not among them
# because no owner CA signature ever exists for it
CERT_LABELS = ("cert-vcek", "cert-aik", "cert-identity")

MESSAGE_TYPES = {
    "vcek-info": 0x0101,
    "cert-vcek-info": 0x0102,
    "cert-tee-info": 0x0103,
    "key-info": 0x0104,
    "aik-challenge": 0x0105,
    "nonce-info": 0x0106,
    "cert-aik-info": 0x0107,
    "key-cert-info": 0x0108,
    "pek-cert-info": 0x0109,
    "register-request": 0x010A,
    "identity-cert-info": 0x010B,
    "attest-request": 0x0201,
    "guest-report-request": 0x0202,
    "tee-report": 0x0203,
    "quote-request": 0x0204,
    "tpm-report": 0x0205,
    "total-report": 0x0206,
    "token-info": 0x0207,
}
MESSAGE_NAMES = {num: name for name, num in MESSAGE_TYPES.items()}


def tee_principal(node_id: str) -> str:
    return node_id + "/tee"


def tpm_principal(node_id: str) -> str:
    return node_id + "/tpm"


def base_principal(principal: str) -> str:
    """Platform identity of a principal: engines fold into their node."""
    return principal.split("/", 1)[0]


# ---------------------------------------------------------------------------
# trace model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    """One protocol step. contents carries "label:hex" pairs naming the
    values the step created, transferred, or exposed."""

    index: int
    principal: str
    kind: str
    peer: str = "-"
    digest: str = "-"
    tag: str = "-"
    ok: bool | None = None
    contents: tuple[str, ...] = ()

    def line(self) -> str:
        ok = "-" if self.ok is None else str(int(self.ok))
        contents = ",".join(self.contents) if self.contents else "-"
        return (f"{self.index} {self.principal} {self.kind} {self.peer} "
                f"{self.digest} {self.tag} {ok} {contents}")

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        parts = line.split()
        if len(parts) != 8:
            raise DecodeError(f"trace line needs 8 columns: {line!r}")
        index, principal, kind, peer, digest, tag, ok, contents = parts
        if kind not in EVENT_KINDS:
            raise DecodeError(f"unknown event kind {kind!r}")
        return cls(
            index=int(index), principal=principal, kind=kind, peer=peer,
            digest=digest, tag=tag,
            ok=None if ok == "-" else bool(int(ok)),
            contents=() if contents == "-" else tuple(contents.split(",")))

    def labeled(self, label: str) -> list[str]:
        """Hex digests carried under a given content label."""
        prefix = label + ":"
        return [c[len(prefix):] for c in self.contents if c.startswith(prefix)]


class ProtocolTrace:
    """Append-only event log for one or more protocol runs."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, principal: str, kind: str, *, peer: str = "-",
             digest: bytes | str = "-", tag: str = "-",
             ok: bool | None = None,
             contents: tuple[str, ...] = ()) -> TraceEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if isinstance(digest, bytes):
            digest = digest.hex() if digest else "-"
        event = TraceEvent(len(self.events), principal, kind, peer, digest,
                           tag, ok, tuple(contents))
        self.events.append(event)
        return event

    def extend_reindexed(self, events: list[TraceEvent]) -> None:
        """Append foreign events, renumbering them onto this trace."""
        for event in events:
            self.events.append(
                TraceEvent(len(self.events), event.principal, event.kind,
                           event.peer, event.digest, event.tag, event.ok,
                           event.contents))

    def lines(self) -> list[str]:
        return [event.line() for event in self.events]

    def text(self) -> str:
        return "\n".join(self.lines()) + ("\n" if self.events else "")

    def digest(self) -> bytes:
        return crypto.sha256(self.text().encode())

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.text())

    @classmethod
    def from_text(cls, text: str) -> "ProtocolTrace":
        trace = cls()
        for line in text.splitlines():
            if line.strip():
                trace.events.append(TraceEvent.from_line(line))
        for position, event in enumerate(trace.events):
            if event.index != position:
                raise DecodeError(
                    f"trace indices must be contiguous, got {event.index} "
                    f"at position {position}")
        return trace

    @classmethod
    def read(cls, path) -> "ProtocolTrace":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())

    def verifier_visible_sends(self, verifier: str = VERIFIER_PRINCIPAL) -> int:
        """Protocol messages a network observer at the verifier sees."""
        return sum(1 for e in self.events if e.kind == "send"
                   and verifier in (e.principal, e.peer))


# ---------------------------------------------------------------------------
# wire format and channels
# ---------------------------------------------------------------------------

_WM_SESSION = 0x0001
_WM_SEALED = 0x0002


@dataclass(frozen=True)
class WireMessage:
    mtype: int
    sender: str
    receiver: str
    session_id: bytes
    body: bytes

    @property
    def type_name(self) -> str:
        return MESSAGE_NAMES.get(self.mtype, f"0x{self.mtype:04x}")


def _wire_aad(mtype: int, sender: str, receiver: str, session_id: bytes) -> bytes:
    return (struct.pack("<H", mtype) + sender.encode() + b"|"
            + receiver.encode() + b"|" + session_id)


class ChannelTable:
    """Pairwise AEAD keys between principals, plus framing.

    A frame is sender|receiver|type|session in the clear (authenticated
    as associated data) with the body sealed under the pair's key.
    """

    def __init__(self, rng) -> None:
        self.rng = rng
        self._keys: dict[frozenset[str], bytes] = {}

    def set_key(self, a: str, b: str, key: bytes) -> None:
        if len(key) != crypto.AEAD_KEY_LEN:
            raise ValueError("channel keys are 32 bytes")
        self._keys[frozenset((a, b))] = key

    def key(self, a: str, b: str) -> bytes:
        try:
            return self._keys[frozenset((a, b))]
        except KeyError:
            raise AuthFailure(f"no channel between {a!r} and {b!r}") from None

    def has(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._keys

    def seal(self, mtype: int, sender: str, receiver: str,
             session_id: bytes, body: bytes) -> bytes:
        key = self.key(sender, receiver)
        aad = _wire_aad(mtype, sender, receiver, session_id)
        sealed = crypto.channel_seal(key, body, aad, self.rng)
        w = FieldWriter()
        w.put_u16(0x0010, mtype)
        w.put_str(0x0011, sender)
        w.put_str(0x0012, receiver)
        w.put(_WM_SESSION, session_id)
        w.put(_WM_SEALED, sealed)
        return w.getvalue()

    def open(self, frame: bytes, expected_receiver: str) -> WireMessage:
        r = FieldReader(frame)
        mtype = r.take_u16(0x0010)
        sender = r.take_str(0x0011)
        receiver = r.take_str(0x0012)
        session_id = r.take(_WM_SESSION)
        sealed = r.take(_WM_SEALED)
        r.finish()
        if receiver != expected_receiver:
            raise AuthFailure(
                f"frame addressed to {receiver!r}, not {expected_receiver!r}")
        key = self.key(sender, receiver)
        aad = _wire_aad(mtype, sender, receiver, session_id)
        body = crypto.channel_open(key, sealed, aad)
        return WireMessage(mtype, sender, receiver, session_id, body)


def _transfer(trace: ProtocolTrace, channels: ChannelTable, sender: str,
              receiver: str, mtype_name: str, body: bytes, *,
              session_id: bytes = b"",
              contents: tuple[str, ...] = ()) -> WireMessage:
    """Seal, 'transmit', and open one message, tracing both endpoints."""
    frame = channels.seal(MESSAGE_TYPES[mtype_name], sender, receiver,
                          session_id, body)
    digest = crypto.sha256(body)
    trace.emit(sender, "send", peer=receiver, digest=digest,
               tag=mtype_name, contents=contents)
    message = channels.open(frame, receiver)
    trace.emit(receiver, "receive", peer=sender,
               digest=crypto.sha256(message.body), tag=mtype_name,
               contents=contents)
    return message


# ---------------------------------------------------------------------------
# platform actor and channel establishment
# ---------------------------------------------------------------------------

@dataclass
class NodeActor:
    """Everything one platform brings to the protocol."""

    node_id: str
    rng: object
    state: tpm.TpmState
    ek_handle: int
    srk_handle: int
    aik_handle: int
    aik_blob: tpm.KeyBlob
    vcek: crypto.SigningKeyPair
    vendor_chain: tee.CertChain
    chip_id: bytes
    tcb: tee.TeeTcb
    tcb_version: int
    launch_measurement: bytes
    pcr_selection: tuple[int, ...]
    identity: crypto.SigningKeyPair
    pek: crypto.SigningKeyPair
    vcek_cert: crypto.Certificate | None = None
    aik_cert: crypto.Certificate | None = None
    identity_cert: crypto.Certificate | None = None
    pek_cert: crypto.Certificate | None = None
    master_secret: crypto.Secret | None = None
    cvm_root_blob: tpm.KeyBlob | None = None

    @property
    def agent(self) -> str:
        return self.node_id

    @property
    def tee_name(self) -> str:
        return tee_principal(self.node_id)

    @property
    def tpm_name(self) -> str:
        return tpm_principal(self.node_id)


def establish_channels(actor: NodeActor, oca_key: crypto.SigningKeyPair,
                       verifier_key: crypto.SigningKeyPair,
                       channels: ChannelTable, rng) -> None:
    """Derive the pairwise channel keys a node needs.

    TPM-side channels run the device's ephemeral-counter exchange so the
    TPM never exposes a stored ephemeral scalar; the other channels use
    the same two-phase agreement in software. Both sides of each pair
    compute the identical key, so the simulation derives it once.
    """
    ek = tpm.loaded_keypair(actor.state, actor.ek_handle)

    def soft_pair(a: str, a_key: crypto.SigningKeyPair,
                  b: str, b_key: crypto.SigningKeyPair) -> None:
        a_eph = crypto.SigningKeyPair.generate(a_key.role, rng)
        b_eph = crypto.SigningKeyPair.generate(b_key.role, rng)
        shared = crypto.ecdh_two_phase(a_key, b_key.public_bytes,
                                       a_eph, b_eph.public_bytes)
        channels.set_key(a, b, shared)

    def tpm_pair(peer: str, peer_key: crypto.SigningKeyPair) -> None:
        eph_pub, counter = tpm.ec_ephemeral(actor.state)
        peer_eph = crypto.SigningKeyPair.generate(peer_key.role, rng)
        shared = tpm.zgen_2phase(actor.state, counter, ek,
                                 peer_key.public_bytes, peer_eph.public_bytes)
        channels.set_key(actor.tpm_name, peer, shared)

    # platform-internal and verifier-facing pairs
    soft_pair(actor.tee_name, actor.pek, actor.agent, actor.identity)
    soft_pair(actor.tee_name, actor.pek, VERIFIER_PRINCIPAL, verifier_key)
    soft_pair(actor.agent, actor.identity, VERIFIER_PRINCIPAL, verifier_key)
    tpm_pair(actor.tee_name, actor.pek)
    tpm_pair(actor.agent, actor.identity)
    tpm_pair(VERIFIER_PRINCIPAL, verifier_key)
    # enrollment pairs toward the owner CA
    soft_pair(actor.tee_name, actor.pek, OCA_PRINCIPAL, oca_key)
    soft_pair(actor.agent, actor.identity, OCA_PRINCIPAL, oca_key)
    tpm_pair(OCA_PRINCIPAL, oca_key)
    # CA and verifier talk revocation; key this pair once
    if not channels.has(OCA_PRINCIPAL, VERIFIER_PRINCIPAL):
        soft_pair(OCA_PRINCIPAL, oca_key, VERIFIER_PRINCIPAL, verifier_key)


# ---------------------------------------------------------------------------
# initialization flow
# ---------------------------------------------------------------------------

def _content(label: str, data: bytes) -> str:
    return f"{label}:{crypto.sha256(data).hex()}"


def run_initialization(actor: NodeActor, oca, verifier_svc: VerifierService,
                       channels: ChannelTable, trace: ProtocolTrace, *,
                       register: bool = True) -> None:
    """Enroll one node end to end, tracing every step.

    Covers TEE chip-key endorsement, AIK certification through a
    credential-activation challenge, platform-encryption-key
    distribution, and (optionally) final registration with identity
    certificate and MasterSecret delivery. Afterwards the verifier holds
    the node's certified keys.
    """
    E, P = actor.tee_name, actor.tpm_name
    A, V = OCA_PRINCIPAL, VERIFIER_PRINCIPAL

    # --- TEE chip key endorsement
    chain_bytes = actor.vendor_chain.to_bytes()
    body = (FieldWriter()
            .put(0x0001, actor.vcek.public_bytes)
            .put(0x0002, chain_bytes)
            .getvalue())
    msg = _transfer(trace, channels, E, A, "vcek-info", body,
                    contents=(_content("vcek-pub", actor.vcek.public_bytes),
                              _content("vendor-chain", chain_bytes)))
    r = FieldReader(msg.body)
    vcek_pub = r.take(0x0001)
    chain = tee.CertChain.from_bytes(r.take(0x0002))
    r.finish()
    vcek_cert = oca.register_tee(vcek_pub, chain, node_id=actor.node_id)
    trace.emit(A, "verify", digest=crypto.sha256(chain_bytes),
               tag="vendor-chain", ok=True)
    trace.emit(A, "sign", digest=vcek_cert.digest, tag="cert-vcek",
               contents=(f"cert-vcek:{vcek_cert.digest.hex()}",))
    msg = _transfer(trace, channels, A, E, "cert-vcek-info",
                    FieldWriter().put(0x0001, vcek_cert.to_bytes()).getvalue(),
                    contents=(f"cert-vcek:{vcek_cert.digest.hex()}",))
    r = FieldReader(msg.body)
    actor.vcek_cert = crypto.Certificate.from_bytes(r.take(0x0001))
    r.finish()
    trace.emit(E, "decrypt", digest=actor.vcek_cert.digest,
               tag="cert-vcek-info",
               contents=(f"cert-vcek:{actor.vcek_cert.digest.hex()}",))
    _transfer(trace, channels, E, V, "cert-tee-info",
              FieldWriter().put(0x0001, actor.vcek_cert.to_bytes()).getvalue(),
              contents=(f"cert-vcek:{actor.vcek_cert.digest.hex()}",))

    # --- AIK certification via credential activation
    area = actor.aik_blob.public_area()
    ek_pub = actor.state.ek_blob.public
    body = (FieldWriter()
            .put(0x0001, area)
            .put(0x0002, ek_pub)
            .put(0x0003, actor.state.ek_cert.to_bytes())
            .getvalue())
    msg = _transfer(trace, channels, P, A, "key-info", body,
                    contents=(_content("aik-pub", area),
                              f"ek-cert:{actor.state.ek_cert.digest.hex()}"))
    r = FieldReader(msg.body)
    area_rx = r.take(0x0001)
    ek_pub_rx = r.take(0x0002)
    ek_cert_rx = crypto.Certificate.from_bytes(r.take(0x0003))
    r.finish()
    challenge = oca.aik_challenge(area_rx, ek_pub_rx, ek_cert_rx,
                                  actor.node_id)
    trace.emit(A, "verify", digest=ek_cert_rx.digest, tag="ek-cert", ok=True)
    trace.emit(A, "new", digest=crypto.sha256(b"challenge:" + challenge.to_bytes()),
               tag="credential-nonce")
    msg = _transfer(trace, channels, A, P, "aik-challenge",
                    FieldWriter().put(0x0001, challenge.to_bytes()).getvalue(),
                    contents=(_content("credential", challenge.to_bytes()),))
    r = FieldReader(msg.body)
    challenge_rx = tpm.Credential.from_bytes(r.take(0x0001))
    r.finish()
    secret = tpm.activate_credential(
        challenge_rx, actor.aik_blob.name,
        tpm.loaded_keypair(actor.state, actor.ek_handle))
    answer_digest = crypto.sha256(b"credential-nonce:" + secret.data)
    trace.emit(P, "decrypt", digest=answer_digest, tag="aik-challenge",
               contents=(f"credential-nonce:{answer_digest.hex()}",))
    msg = _transfer(trace, channels, P, A, "nonce-info",
                    FieldWriter().put(0x0001, secret.data).getvalue(),
                    contents=(f"credential-nonce:{answer_digest.hex()}",))
    r = FieldReader(msg.body)
    answer = crypto.Secret(r.take(0x0001))
    r.finish()
    aik_cert = oca.aik_answer(challenge_session_id(challenge), answer)
    trace.emit(A, "match", digest=answer_digest, tag="credential-nonce",
               ok=True)
    trace.emit(A, "sign", digest=aik_cert.digest, tag="cert-aik",
               contents=(f"cert-aik:{aik_cert.digest.hex()}",))
    msg = _transfer(trace, channels, A, P, "cert-aik-info",
                    FieldWriter().put(0x0001, aik_cert.to_bytes()).getvalue(),
                    contents=(f"cert-aik:{aik_cert.digest.hex()}",))
    r = FieldReader(msg.body)
    actor.aik_cert = crypto.Certificate.from_bytes(r.take(0x0001))
    r.finish()
    trace.emit(P, "decrypt", digest=actor.aik_cert.digest,
               tag="cert-aik-info",
               contents=(f"cert-aik:{actor.aik_cert.digest.hex()}",))
    _transfer(trace, channels, P, V, "key-cert-info",
              (FieldWriter()
               .put(0x0001, actor.aik_cert.to_bytes())
               .put(0x0002, area)
               .getvalue()),
              contents=(f"cert-aik:{actor.aik_cert.digest.hex()}",))

    # --- platform encryption key, endorsed inside the TEE by the chip key
    pek_cert = crypto.issue_certificate(actor.vcek, "PEK", 1,
                                        actor.pek.public_bytes)
    actor.pek_cert = pek_cert
    trace.emit(E, "sign", digest=pek_cert.digest, tag="pek-cert",
               contents=(f"pek-cert:{pek_cert.digest.hex()}",))
    _transfer(trace, channels, E, V, "pek-cert-info",
              FieldWriter().put(0x0001, pek_cert.to_bytes()).getvalue(),
              contents=(f"pek-cert:{pek_cert.digest.hex()}",))

    if register:
        run_registration(actor, oca, channels, trace)

    verifier_svc.register_node_keys(
        actor.node_id, actor.chip_id, actor.aik_blob.public,
        actor.vcek.public_bytes, aik_cert=actor.aik_cert,
        vcek_cert=actor.vcek_cert, oca_pub=oca.public_bytes)


def run_registration(actor: NodeActor, oca, channels: ChannelTable,
                     trace: ProtocolTrace) -> None:
    """Final onboarding: fresh boot evidence buys the identity
    certificate and the MasterSecret."""
    C, A = actor.agent, OCA_PRINCIPAL
    report_data = crypto.sha256(actor.identity.public_bytes) + bytes(32)
    boot_report = tee.guest_report(actor.vcek, actor.chip_id, actor.tcb,
                                   actor.tcb_version, report_data)
    body = (FieldWriter()
            .put(0x0001, boot_report.to_bytes())
            .put(0x0002, actor.vendor_chain.to_bytes())
            .put(0x0003, actor.identity.public_bytes)
            .getvalue())
    msg = _transfer(trace, channels, C, A, "register-request", body,
                    contents=(_content("identity-pub", actor.identity.public_bytes),
                              f"boot-report:{boot_report.digest.hex()}"))
    r = FieldReader(msg.body)
    report_rx = tee.TeeReport.from_bytes(r.take(0x0001))
    chain_rx = tee.CertChain.from_bytes(r.take(0x0002))
    identity_pub_rx = r.take(0x0003)
    r.finish()
    identity_cert, master_secret = oca.register_node(
        actor.node_id, report_rx, chain_rx, identity_pub_rx)
    trace.emit(A, "verify", digest=report_rx.digest,
               tag="registration-evidence", ok=True)
    trace.emit(A, "sign", digest=identity_cert.digest, tag="cert-identity",
               contents=(f"cert-identity:{identity_cert.digest.hex()}",))
    ms_commit = crypto.sha256(b"master-secret:" + master_secret.data)
    msg = _transfer(trace, channels, A, C, "identity-cert-info",
                    (FieldWriter()
                     .put(0x0001, identity_cert.to_bytes())
                     .put(0x0002, master_secret.data)
                     .getvalue()),
                    contents=(f"cert-identity:{identity_cert.digest.hex()}",
                              f"master-secret:{ms_commit.hex()}"))
    r = FieldReader(msg.body)
    actor.identity_cert = crypto.Certificate.from_bytes(r.take(0x0001))
    actor.master_secret = crypto.Secret(r.take(0x0002))
    r.finish()
    trace.emit(C, "decrypt", digest=actor.identity_cert.digest,
               tag="identity-cert-info",
               contents=(f"cert-identity:{actor.identity_cert.digest.hex()}",
                         f"master-secret:{ms_commit.hex()}"))


# ---------------------------------------------------------------------------
# composite evidence envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeReportEnvelope:
    """What the platform agent submits: direction, identity claim,
    session binding, and the outer evidence blob."""

    direction: str
    node_id: str
    session_id: bytes
    evidence: bytes

    def to_bytes(self) -> bytes:
        return (FieldWriter()
                .put_str(0x0001, self.direction)
                .put_str(0x0002, self.node_id)
                .put(0x0003, self.session_id)
                .put(0x0004, self.evidence)
                .getvalue())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CompositeReportEnvelope":
        r = FieldReader(raw)
        direction = r.take_str(0x0001)
        node_id = r.take_str(0x0002)
        session_id = r.take(0x0003)
        evidence = r.take(0x0004)
        r.finish()
        return cls(direction, node_id, session_id, evidence)


# ---------------------------------------------------------------------------
# attestation flows
# ---------------------------------------------------------------------------

def _send_attest_request(verifier_svc, actor, channels, trace, policy_id,
                         direction) -> tuple:
    """Verifier opens a session and sends the challenge; returns the
    parsed request as the platform agent sees it."""
    V, C = VERIFIER_PRINCIPAL, actor.agent
    request = verifier_svc.new_request(policy_id, actor.node_id)
    session_hex = request.session_id.hex()
    trace.emit(V, "new", digest=crypto.sha256(request.nonce),
               tag="attest-nonce", contents=(f"session:{session_hex}",))
    body = (FieldWriter()
            .put(0x0001, request.session_id)
            .put(0x0002, request.nonce)
            .put_str(0x0003, policy_id)
            .put(0x0004, tpm.selection_to_bitmap(request.pcr_selection))
            .put_str(0x0005, direction)
            .getvalue())
    msg = _transfer(trace, channels, V, C, "attest-request", body,
                    session_id=request.session_id,
                    contents=(f"session:{session_hex}",))
    r = FieldReader(msg.body)
    session_id = r.take(0x0001)
    nonce = r.take(0x0002)
    policy_rx = r.take_str(0x0003)
    selection = tpm.bitmap_to_selection(r.take(0x0004))
    direction_rx = r.take_str(0x0005)
    r.finish()
    return request, session_id, nonce, policy_rx, selection, direction_rx


def _tee_report_internal(actor, channels, trace, session_id, report_data,
                         embedded: bytes, *, tag: str) -> tee.TeeReport:
    """Agent asks its TEE engine for a signed report."""
    C, E = actor.agent, actor.tee_name
    session_hex = session_id.hex()
    body = (FieldWriter()
            .put(0x0001, report_data)
            .put(0x0002, embedded)
            .put(0x0003, session_id)
            .getvalue())
    msg = _transfer(trace, channels, C, E, "guest-report-request", body,
                    session_id=session_id,
                    contents=(f"session:{session_hex}",))
    r = FieldReader(msg.body)
    data_rx = r.take(0x0001)
    embed_rx = r.take(0x0002)
    r.take(0x0003)
    r.finish()
    report = tee.guest_report(actor.vcek, actor.chip_id, actor.tcb,
                              actor.tcb_version, data_rx,
                              embedded_evidence=embed_rx)
    trace.emit(E, "sign", digest=report.digest, tag=tag,
               contents=(f"session:{session_hex}",
                         f"report:{report.digest.hex()}"))
    msg = _transfer(trace, channels, E, C, "tee-report",
                    FieldWriter().put(0x0001, report.to_bytes()).getvalue(),
                    session_id=session_id,
                    contents=(f"report:{report.digest.hex()}",))
    r = FieldReader(msg.body)
    report_rx = tee.TeeReport.from_bytes(r.take(0x0001))
    r.finish()
    return report_rx


def _tpm_quote_internal(actor, channels, trace, session_id, selection,
                        qualifying_data, embedded: bytes, *,
                        tag: str) -> tpm.CompositeQuote:
    """Agent asks its TPM for a (composite) quote."""
    C, P = actor.agent, actor.tpm_name
    session_hex = session_id.hex()
    body = (FieldWriter()
            .put(0x0001, tpm.selection_to_bitmap(selection))
            .put(0x0002, qualifying_data)
            .put(0x0003, embedded)
            .put(0x0004, session_id)
            .getvalue())
    msg = _transfer(trace, channels, C, P, "quote-request", body,
                    session_id=session_id,
                    contents=(f"session:{session_hex}",))
    r = FieldReader(msg.body)
    selection_rx = tpm.bitmap_to_selection(r.take(0x0001))
    qualifying_rx = r.take(0x0002)
    embed_rx = r.take(0x0003)
    r.take(0x0004)
    r.finish()
    quote_obj = tpm.cc_quote(actor.state, selection_rx, qualifying_rx,
                             actor.aik_handle, embed_rx)
    trace.emit(P, "sign", digest=quote_obj.digest, tag=tag,
               contents=(f"session:{session_hex}",
                         f"quote:{quote_obj.digest.hex()}"))
    msg = _transfer(trace, channels, P, C, "tpm-report",
                    FieldWriter().put(0x0001, quote_obj.to_bytes()).getvalue(),
                    session_id=session_id,
                    contents=(f"quote:{quote_obj.digest.hex()}",))
    r = FieldReader(msg.body)
    quote_rx = tpm.CompositeQuote.from_bytes(r.take(0x0001))
    r.finish()
    return quote_rx


def _submit_and_tokenize(verifier_svc, actor, channels, trace, request,
                         policy, envelope: CompositeReportEnvelope, *,
                         evidence_mutator: Callable | None = None):
    """Agent submits the envelope; verifier checks it and, on success,
    mints and returns the token."""
    V, C = VERIFIER_PRINCIPAL, actor.agent
    if evidence_mutator is not None:
        envelope = evidence_mutator(envelope)
    session_hex = request.session_id.hex()
    envelope_bytes = envelope.to_bytes()
    msg = _transfer(trace, channels, C, V, "total-report",
                    FieldWriter().put(0x0001, envelope_bytes).getvalue(),
                    session_id=request.session_id,
                    contents=(f"session:{session_hex}",
                              _content("envelope", envelope_bytes)))
    r = FieldReader(msg.body)
    envelope_rx = CompositeReportEnvelope.from_bytes(r.take(0x0001))
    r.finish()
    outcome, verified = verifier_svc.verify_composite(envelope_rx, request,
                                                      policy)
    trace.emit(V, "verify", digest=crypto.sha256(envelope_rx.to_bytes()),
               tag="composite-evidence", ok=outcome is CompositeOutcome.OK,
               contents=(f"session:{session_hex}",
                         f"outcome:{outcome.value}"))
    if outcome is not CompositeOutcome.OK:
        raise AttestationRejected(outcome, f"evidence rejected: {outcome.value}")
    token = verifier_svc.issue_token(request, verified, policy)
    token_digest = crypto.sha256(token.compact().encode())
    trace.emit(V, "sign", digest=token_digest, tag="token",
               contents=(f"token:{token_digest.hex()}",
                         f"session:{session_hex}"))
    msg = _transfer(trace, channels, V, C, "token-info",
                    FieldWriter().put_str(0x0001, token.compact()).getvalue(),
                    session_id=request.session_id,
                    contents=(f"token:{token_digest.hex()}",))
    r = FieldReader(msg.body)
    token_text = r.take_str(0x0001)
    r.finish()
    trace.emit(C, "decrypt", digest=crypto.sha256(token_text.encode()),
               tag="token-info",
               contents=(f"token:{crypto.sha256(token_text.encode()).hex()}",))
    return token


def run_attest_composite(actor: NodeActor, verifier_svc: VerifierService,
                         channels: ChannelTable, trace: ProtocolTrace, *,
                         policy_id: str, direction: str = "tpm-tee",
                         evidence_mutator: Callable | None = None):
    """One composite attestation: three verifier-visible messages.

    tpm-tee: the TEE report (bound to the session nonce) is embedded in
    a TPM quote whose qualifying data is the same nonce. tee-tpm: the
    quote is embedded in a TEE report whose report_data binds both the
    nonce and the embedded bytes.
    """
    if direction not in ("tpm-tee", "tee-tpm"):
        raise ValueError(f"unknown direction {direction!r}")
    policy = verifier_svc.get_policy(policy_id)
    request, session_id, nonce, _policy_rx, selection, direction_rx = \
        _send_attest_request(verifier_svc, actor, channels, trace,
                             policy_id, direction)
    if direction_rx == "tpm-tee":
        report_data = crypto.sha256(nonce) + bytes(32)
        report = _tee_report_internal(actor, channels, trace, session_id,
                                      report_data, b"", tag="tee-report")
        quote_obj = _tpm_quote_internal(actor, channels, trace, session_id,
                                        selection, nonce, report.to_bytes(),
                                        tag="total-report")
        evidence = quote_obj.to_bytes()
    else:
        quote_obj = _tpm_quote_internal(actor, channels, trace, session_id,
                                        selection, nonce, b"",
                                        tag="tpm-report")
        quote_bytes = quote_obj.to_bytes()
        report_data = nonce + crypto.sha256(quote_bytes)
        report = _tee_report_internal(actor, channels, trace, session_id,
                                      report_data, quote_bytes,
                                      tag="total-report")
        evidence = report.to_bytes()
    envelope = CompositeReportEnvelope(direction_rx, actor.node_id,
                                       session_id, evidence)
    return _submit_and_tokenize(verifier_svc, actor, channels, trace,
                                request, policy, envelope,
                                evidence_mutator=evidence_mutator)


def run_attest_single(actor: NodeActor, verifier_svc: VerifierService,
                      channels: ChannelTable, trace: ProtocolTrace, *,
                      policy_id: str, technology: str):
    """One single-technology attestation: three verifier-visible
    messages that vouch for the TEE or the TPM but never both."""
    if technology not in ("tee", "tpm"):
        raise ValueError(f"unknown technology {technology!r}")
    V, C = VERIFIER_PRINCIPAL, actor.agent
    policy = verifier_svc.get_policy(policy_id)
    request, session_id, nonce, _p, selection, _d = _send_attest_request(
        verifier_svc, actor, channels, trace, policy_id, technology)
    if technology == "tee":
        report = _tee_report_internal(actor, channels, trace, session_id,
                                      nonce + bytes(32), b"",
                                      tag="total-report")
        evidence = report.to_bytes()
    else:
        quote_obj = _tpm_quote_internal(actor, channels, trace, session_id,
                                        selection, nonce, b"",
                                        tag="total-report")
        evidence = quote_obj.to_bytes()
    msg = _transfer(trace, channels, C, V, "total-report",
                    FieldWriter().put(0x0001, evidence).getvalue(),
                    session_id=session_id,
                    contents=(f"session:{session_id.hex()}",
                              _content("envelope", evidence)))
    r = FieldReader(msg.body)
    evidence_rx = r.take(0x0001)
    r.finish()
    if technology == "tee":
        outcome, verified = verifier_svc.verify_tee_report(evidence_rx,
                                                           request, policy)
    else:
        outcome, verified = verifier_svc.verify_tpm_quote(evidence_rx,
                                                          request, policy)
    trace.emit(V, "verify", digest=crypto.sha256(evidence_rx),
               tag=f"{technology}-evidence",
               ok=outcome is CompositeOutcome.OK,
               contents=(f"outcome:{outcome.value}",))
    if outcome is not CompositeOutcome.OK:
        raise AttestationRejected(
            outcome, f"{technology} leg rejected: {outcome.value}")
    return _issue_leg_token(verifier_svc, actor, channels, trace, request,
                            verified, policy)


def run_attest_independent(actor: NodeActor, verifier_svc: VerifierService,
                           channels: ChannelTable, trace: ProtocolTrace, *,
                           policy_id: str):
    """Baseline: two separate single-technology attestations (six
    verifier-visible messages), yielding two tokens that nothing binds
    to each other."""
    return [
        run_attest_single(actor, verifier_svc, channels, trace,
                          policy_id=policy_id, technology="tee"),
        run_attest_single(actor, verifier_svc, channels, trace,
                          policy_id=policy_id, technology="tpm"),
    ]


def _issue_leg_token(verifier_svc, actor, channels, trace, request, verified,
                     policy):
    V, C = VERIFIER_PRINCIPAL, actor.agent
    token = verifier_svc.issue_token(request, verified, policy)
    token_digest = crypto.sha256(token.compact().encode())
    trace.emit(V, "sign", digest=token_digest, tag="token",
               contents=(f"token:{token_digest.hex()}",
                         f"session:{request.session_id.hex()}"))
    msg = _transfer(trace, channels, V, C, "token-info",
                    FieldWriter().put_str(0x0001, token.compact()).getvalue(),
                    session_id=request.session_id,
                    contents=(f"token:{token_digest.hex()}",))
    r = FieldReader(msg.body)
    token_text = r.take_str(0x0001)
    r.finish()
    trace.emit(C, "decrypt", digest=crypto.sha256(token_text.encode()),
               tag="token-info",
               contents=(f"token:{crypto.sha256(token_text.encode()).hex()}",))
    return token


# ---------------------------------------------------------------------------
# trace-level trust properties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoremVerdict:
    name: str
    ok: bool
    reason: str
    witness: tuple[int, ...] = ()

    def line(self) -> str:
        status = "pass" if self.ok else "FAIL"
        witness = ",".join(str(i) for i in self.witness) if self.witness else "-"
        return f"{self.name} {status} witness={witness} {self.reason}"


_CERT_EVIDENCE = {
    "cert-vcek": ("verify", "vendor-chain"),
    "cert-aik": ("match", "credential-nonce"),
    "cert-identity": ("verify", "registration-evidence"),
}


def check_theorems(trace: ProtocolTrace, *, oca: str = OCA_PRINCIPAL,
                   verifier: str = VERIFIER_PRINCIPAL
                   ) -> dict[str, TheoremVerdict]:
    """Check the three trust-chain properties over a trace.

    cert-provenance: whoever holds an owner-CA certificate got it from a
    CA that signed it after checking the key-possession evidence for
    that certificate class, and the CA sent it to that holder.

    token-provenance: whoever holds an attestation token got it from the
    verifier, which signed it first.

    attest-order: evidence for a session is only signed after the
    platform received that session's request from the verifier, and
    nobody but the verifier ever signs a token.
    """
    events = trace.events
    return {
        "cert-provenance": _check_cert_provenance(events, oca),
        "token-provenance": _check_token_provenance(events, verifier),
        "attest-order": _check_attest_order(events, verifier),
    }


def _possessions(events, labels) -> list[tuple[TraceEvent, str, str]]:
    """(event, label, hex) for every labeled value a principal takes
    possession of by decrypting."""
    found = []
    for event in events:
        if event.kind != "decrypt":
            continue
        for label in labels:
            for hexdigest in event.labeled(label):
                found.append((event, label, hexdigest))
    return found


def _check_cert_provenance(events, oca) -> TheoremVerdict:
    witnesses = []
    for event, label, hexdigest in _possessions(events, CERT_LABELS):
        holder = base_principal(event.principal)
        earlier = events[:event.index]
        signed = [e for e in earlier
                  if e.kind == "sign" and e.principal == oca
                  and e.digest == hexdigest]
        if not signed:
            return TheoremVerdict(
                "cert-provenance", False,
                f"{holder} holds {label} {hexdigest[:16]} never signed by {oca}",
                (event.index,))
        sign_index = signed[0].index
        evidence_kind, evidence_tag = _CERT_EVIDENCE[label]
        vouched = any(e.kind == evidence_kind and e.tag == evidence_tag
                      and e.principal == oca and e.ok
                      for e in events[:sign_index])
        if not vouched:
            return TheoremVerdict(
                "cert-provenance", False,
                f"{oca} signed {label} {hexdigest[:16]} without prior "
                f"{evidence_tag} evidence", (sign_index, event.index))
        delivered = any(e.kind == "send" and e.principal == oca
                        and base_principal(e.peer) == holder
                        and f"{label}:{hexdigest}" in e.contents
                        for e in earlier)
        if not delivered:
            return TheoremVerdict(
                "cert-provenance", False,
                f"{oca} never sent {label} {hexdigest[:16]} to {holder}",
                (event.index,))
        witnesses.append(event.index)
    return TheoremVerdict("cert-provenance", True,
                          f"{len(witnesses)} certificate possessions justified",
                          tuple(witnesses))


def _check_token_provenance(events, verifier) -> TheoremVerdict:
    witnesses = []
    for event, _label, hexdigest in _possessions(events, ("token",)):
        holder = base_principal(event.principal)
        earlier = events[:event.index]
        signed = any(e.kind == "sign" and e.principal == verifier
                     and e.digest == hexdigest for e in earlier)
        if not signed:
            return TheoremVerdict(
                "token-provenance", False,
                f"{holder} holds token {hexdigest[:16]} never signed by "
                f"{verifier}", (event.index,))
        delivered = any(e.kind == "send" and e.principal == verifier
                        and base_principal(e.peer) == holder
                        and f"token:{hexdigest}" in e.contents
                        for e in earlier)
        if not delivered:
            return TheoremVerdict(
                "token-provenance", False,
                f"{verifier} never sent token {hexdigest[:16]} to {holder}",
                (event.index,))
        witnesses.append(event.index)
    return TheoremVerdict("token-provenance", True,
                          f"{len(witnesses)} token possessions justified",
                          tuple(witnesses))


def _check_attest_order(events, verifier) -> TheoremVerdict:
    checked = []
    for event in events:
        if event.kind == "sign" and event.tag == "token" \
                and event.principal != verifier:
            return TheoremVerdict(
                "attest-order", False,
                f"{event.principal} signed a token; only {verifier} may",
                (event.index,))
        if event.kind != "sign" or event.tag != "total-report":
            continue
        prover = base_principal(event.principal)
        sessions = event.labeled("session")
        requested = any(
            e.kind == "receive" and e.tag == "attest-request"
            and base_principal(e.principal) == prover
            and e.peer == verifier
            and any(s in e.labeled("session") for s in sessions)
            for e in events[:event.index])
        if not requested:
            return TheoremVerdict(
                "attest-order", False,
                f"{prover} signed evidence for session "
                f"{(sessions[0][:16] if sessions else '?')} before receiving "
                f"the request", (event.index,))
        checked.append(event.index)
    return TheoremVerdict("attest-order", True,
                          f"{len(checked)} evidence signatures in order",
                          tuple(checked))
