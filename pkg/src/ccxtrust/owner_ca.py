"""Owner certificate authority.

The platform owner's trust anchor: it validates vendor-rooted identities
(the TEE chip endorsement chain and the TPM manufacturer's EK cert), runs
the credential-activation challenge that proves joint EK+AIK possession,
issues owner certificates, provisions each node's MasterSecret, and keeps
the registry, revocation list, and audit trail that the verifier consults.

The registry is single-writer: every mutation happens under one lock and
appends a line to an append-only record log. snapshot() captures the
registry for periodic checkpointing.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

from . import crypto, tee, tpm
from .clock import SystemClock
from .errors import (
    BaselineRejected,
    ChainInvalid,
    ChallengeFailed,
    NodeUnknown,
    NotInitialized,
    SessionInvalid,
)

CHALLENGE_TTL = 120.0   # seconds a credential challenge stays answerable


class NodeStatus(Enum):
    TEE_REGISTERED = "tee-registered"
    AIK_CERTIFIED = "aik-certified"
    ACTIVE = "active"
    REVOKED = "revoked"


class AuditOutcome(Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass(frozen=True)
class TrustBaseline:
    """Known-good platform state a node must prove before provisioning."""

    launch_measurement: bytes
    pcr_selection: tuple[int, ...]
    pcr_composite: bytes


@dataclass
class NodeRecord:
    node_id: str
    vcek_pub: bytes = b""
    vcek_cert: crypto.Certificate | None = None
    chip_id: bytes = b""
    ek_cert_digest: bytes = b""
    aik_pub: bytes = b""
    aik_cert: crypto.Certificate | None = None
    identity_cert: crypto.Certificate | None = None
    master_secret_provisioned: bool = False
    baseline: TrustBaseline | None = None
    status: NodeStatus = NodeStatus.TEE_REGISTERED
    last_audit: float | None = None


@dataclass
class ChallengeSession:
    session_id: bytes
    node_id: str
    nonce: crypto.Secret = field(repr=False)
    aik_name: bytes
    aik_pub: bytes
    ek_pub: bytes
    expires_at: float
    consumed: bool = False


def challenge_session_id(challenge: tpm.Credential) -> bytes:
    """Session handle both sides can compute from the challenge itself."""
    return crypto.sha256(b"aik-session:" + challenge.to_bytes())[:16]


class OwnerCa:
    def __init__(self, *, trusted_tee_root: bytes, trusted_tpm_root: bytes,
                 clock=None, rng=None) -> None:
        self.clock = clock if clock is not None else SystemClock()
        self.rng = rng if rng is not None else crypto.SystemRng()
        self.key = crypto.SigningKeyPair.from_seed(
            "OCA", self.rng.random_bytes(32))
        self.trusted_tee_root = trusted_tee_root
        self.trusted_tpm_root = trusted_tpm_root
        self.nodes: dict[str, NodeRecord] = {}
        self._sessions: dict[bytes, ChallengeSession] = {}
        self._revoked_serials: set[int] = set()
        self._revoked_nodes: set[str] = set()
        self._revocation_version = 0
        self._next_serial = 1
        self._records: list[str] = []
        self.audit_log: list[str] = []
        self._lock = threading.RLock()

    @property
    def public_bytes(self) -> bytes:
        return self.key.public_bytes

    # -- registration flow ---------------------------------------------------

    def register_tee(self, vcek_pub: bytes, vendor_chain: tee.CertChain,
                     node_id: str | None = None) -> crypto.Certificate:
        """Verify the vendor chain for a chip key and issue the owner's
        VCEK certificate. Re-registration updates the record under a new
        serial."""
        if not vendor_chain.verify(self.trusted_tee_root):
            raise ChainInvalid("vendor chain does not verify to the trusted root")
        if vendor_chain.vcek.subject != vcek_pub:
            raise ChainInvalid("chain endorses a different key")
        if node_id is None:
            node_id = crypto.sha256(vcek_pub).hex()[:16]
        with self._lock:
            cert = self._issue("VCEK", vcek_pub)
            record = self.nodes.get(node_id)
            if record is None:
                record = NodeRecord(node_id)
                self.nodes[node_id] = record
            record.vcek_pub = vcek_pub
            record.vcek_cert = cert
            # status is left alone: re-registration refreshes the cert but
            # neither resurrects a revoked node nor rewinds its progress
            self._record(f"register-tee {node_id} serial={cert.serial}")
        return cert

    def aik_challenge(self, aik_public_area: bytes, ek_pub: bytes,
                      ek_cert: crypto.Certificate,
                      node_id: str) -> tpm.Credential:
        """Open a credential-activation challenge for an (EK, AIK) pair.

        The AIK arrives as its full public area; deriving both the key
        name and the certified point from the same bytes is what binds
        the credential to exactly the key that was presented. The EK cert
        must verify under the TPM manufacturer root. The returned
        challenge can only be answered by a TPM holding that EK with that
        AIK loaded; the session expires after CHALLENGE_TTL.
        """
        if not ek_cert.verify(self.trusted_tpm_root):
            raise ChainInvalid("EK certificate does not verify under the TPM vendor root")
        if ek_cert.subject != ek_pub:
            raise ChainInvalid("EK certificate endorses a different key")
        aik_blob = tpm.parse_public_area(aik_public_area)
        aik_pub = aik_blob.public
        with self._lock:
            if node_id not in self.nodes:
                raise NodeUnknown(f"node {node_id!r} has no TEE registration")
            nonce = crypto.Secret(self.rng.random_bytes(32))
            aik_name = aik_blob.name
            challenge = tpm.make_credential(nonce, aik_name, ek_pub, self.rng)
            sid = challenge_session_id(challenge)
            self._sessions[sid] = ChallengeSession(
                session_id=sid, node_id=node_id, nonce=nonce,
                aik_name=aik_name, aik_pub=aik_pub, ek_pub=ek_pub,
                expires_at=self.clock.now() + CHALLENGE_TTL)
            record = self.nodes[node_id]
            record.ek_cert_digest = ek_cert.digest
            self._record(f"aik-challenge {node_id} session={sid.hex()}")
        return challenge

    def aik_answer(self, session_id: bytes, answer: crypto.Secret) -> crypto.Certificate:
        """Close a challenge. The session is one-shot: a wrong answer
        burns it."""
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise SessionInvalid("unknown challenge session")
            if session.consumed:
                raise SessionInvalid("challenge session already consumed")
            if self.clock.now() > session.expires_at:
                session.consumed = True
                raise SessionInvalid("challenge session expired")
            session.consumed = True
            if not (session.nonce == answer):
                self._record(f"aik-answer {session.node_id} result=failed")
                raise ChallengeFailed("activation answer does not match")
            cert = self._issue("AIK", session.aik_pub)
            record = self.nodes[session.node_id]
            record.aik_pub = session.aik_pub
            record.aik_cert = cert
            if record.status == NodeStatus.TEE_REGISTERED:
                record.status = NodeStatus.AIK_CERTIFIED
            self._record(f"aik-answer {session.node_id} serial={cert.serial}")
        return cert

    def set_trust_baseline(self, node_id: str, baseline: TrustBaseline) -> None:
        with self._lock:
            record = self._node(node_id)
            record.baseline = baseline
            self._record(f"set-baseline {node_id}")

    def register_node(self, node_id: str, tee_report: tee.TeeReport,
                      vendor_chain: tee.CertChain,
                      identity_pub: bytes) -> tuple[crypto.Certificate, crypto.Secret]:
        """Final onboarding step: check fresh evidence against the trust
        baseline, then issue the node identity certificate and its
        MasterSecret."""
        with self._lock:
            record = self._node(node_id)
            if record.vcek_cert is None or record.aik_cert is None:
                raise NotInitialized("identity flows incomplete for this node")
            if record.baseline is None:
                raise NotInitialized("no trust baseline configured for this node")
            check = tee.verify_report(tee_report, vendor_chain, self.trusted_tee_root,
                                      expected_measurement=record.baseline.launch_measurement)
            if check is not tee.ReportCheck.OK:
                raise BaselineRejected(f"registration evidence rejected: {check.value}")
            if vendor_chain.vcek.subject != record.vcek_pub:
                raise BaselineRejected("evidence signed by an unregistered chip key")
            record.chip_id = tee_report.chip_id
            identity_cert = self._issue("IDENTITY", identity_pub)
            master_secret = crypto.Secret(self.rng.random_bytes(32))
            record.identity_cert = identity_cert
            record.master_secret_provisioned = True
            record.status = NodeStatus.ACTIVE
            self._record(f"register-node {node_id} serial={identity_cert.serial}")
        return identity_cert, master_secret

    # -- lifecycle -----------------------------------------------------------

    def revoke(self, node_id: str, reason: str) -> None:
        """Revoke a node and every certificate issued to it. Idempotent."""
        with self._lock:
            record = self._node(node_id)
            serials = {c.serial for c in (record.vcek_cert, record.aik_cert,
                                          record.identity_cert) if c is not None}
            already = record.status == NodeStatus.REVOKED and serials <= self._revoked_serials
            record.status = NodeStatus.REVOKED
            self._revoked_nodes.add(node_id)
            self._revoked_serials |= serials
            if not already:
                self._revocation_version += 1
                self._record(f"revoke {node_id} reason={reason}")
                self.audit_log.append(
                    f"{self.clock.now():.3f} revoke {node_id} {reason}")

    def audit(self, node_id: str, fresh_report: tee.TeeReport,
              vendor_chain: tee.CertChain) -> AuditOutcome:
        """Re-measure a node against its baseline; divergence revokes it."""
        with self._lock:
            record = self._node(node_id)
            if record.status == NodeStatus.REVOKED:
                self.audit_log.append(
                    f"{self.clock.now():.3f} audit {node_id} fail revoked")
                return AuditOutcome.FAIL
            if record.baseline is None:
                raise NotInitialized("no trust baseline configured for this node")
            check = tee.verify_report(fresh_report, vendor_chain, self.trusted_tee_root,
                                      expected_measurement=record.baseline.launch_measurement)
            record.last_audit = self.clock.now()
            if check is not tee.ReportCheck.OK:
                self.audit_log.append(
                    f"{self.clock.now():.3f} audit {node_id} fail {check.value}")
                self.revoke(node_id, f"audit:{check.value}")
                return AuditOutcome.FAIL
            self.audit_log.append(f"{self.clock.now():.3f} audit {node_id} pass")
            return AuditOutcome.PASS

    def is_revoked(self, node_id: str) -> bool:
        with self._lock:
            return node_id in self._revoked_nodes

    def revocation_list(self) -> tuple[int, frozenset[int], frozenset[str]]:
        """(version, revoked cert serials, revoked node ids)."""
        with self._lock:
            return (self._revocation_version, frozenset(self._revoked_serials),
                    frozenset(self._revoked_nodes))

    # -- registry plumbing ---------------------------------------------------

    def _node(self, node_id: str) -> NodeRecord:
        record = self.nodes.get(node_id)
        if record is None:
            raise NodeUnknown(f"no record for node {node_id!r}")
        return record

    def _issue(self, role: str, subject_pub: bytes) -> crypto.Certificate:
        serial = self._next_serial
        self._next_serial += 1
        return crypto.issue_certificate(self.key, role, serial, subject_pub)

    def _record(self, line: str) -> None:
        self._records.append(f"{len(self._records)} {self.clock.now():.3f} {line}")

    @property
    def record_log(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._records)

    def snapshot(self) -> str:
        """Registry checkpoint: one line per node plus the revocation set."""
        with self._lock:
            lines = [f"snapshot records={len(self._records)} "
                     f"revocation-version={self._revocation_version}"]
            for node_id in sorted(self.nodes):
                r = self.nodes[node_id]
                lines.append(
                    f"node {node_id} status={r.status.value} "
                    f"vcek={r.vcek_cert.serial if r.vcek_cert else '-'} "
                    f"aik={r.aik_cert.serial if r.aik_cert else '-'} "
                    f"identity={r.identity_cert.serial if r.identity_cert else '-'} "
                    f"provisioned={int(r.master_secret_provisioned)}")
            lines.append("revoked-serials " +
                         (",".join(str(s) for s in sorted(self._revoked_serials)) or "-"))
            return "\n".join(lines) + "\n"
