"""Attestation verifier service.

Owns the relying-party side of every flow: it opens attestation sessions
with fresh nonces, checks composite evidence layer by layer (signatures,
nonce/session binding, identity join, measurement and PCR baselines, TCB
floor, revocation), and turns accepted evidence into signed bearer tokens
in a compact three-segment format. Tokens it issued are logged by serial;
validation re-checks structure, signature, expiry, and revocation.

verify_composite is the only constructor of VerifiedReport, and
issue_token accepts nothing else, so a token can never be minted from
unverified evidence by construction.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from . import crypto, tee, tpm
from .clock import SystemClock
from .encoding import b64url_decode, b64url_encode
from .errors import (
    CcxError,
    ChainInvalid,
    DecodeError,
    MalformedSignature,
    NodeRevoked,
)

if TYPE_CHECKING:   # pragma: no cover - import only for annotations
    from .protocol import CompositeReportEnvelope

TOKEN_FORMAT_VERSION = 1
DEFAULT_TOKEN_LIFETIME = 3600.0

REPORT_DATA_PAD = b"\x00" * 32


class CompositeOutcome(Enum):
    OK = "ok"
    MALFORMED = "malformed"
    OUTER_SIGNATURE_INVALID = "outer-signature-invalid"
    INNER_SIGNATURE_INVALID = "inner-signature-invalid"
    NONCE_MISMATCH = "nonce-mismatch"
    SESSION_REPLAY = "session-replay"
    IDENTITY_MISMATCH = "identity-mismatch"
    MEASUREMENT_MISMATCH = "measurement-mismatch"
    PCR_MISMATCH = "pcr-mismatch"
    TCB_REJECTED = "tcb-rejected"
    NODE_REVOKED = "node-revoked"


class TokenRejection(Enum):
    MALFORMED = "malformed"
    BAD_SIGNATURE = "bad-signature"
    EXPIRED = "expired"
    REVOKED_NODE = "revoked-node"


@dataclass(frozen=True)
class PolicyBaseline:
    """What a relying party demands from a platform."""

    policy_id: str
    expected_measurement: bytes
    pcr_selection: tuple[int, ...]
    expected_pcr_composite: bytes
    min_tcb_version: int
    allowed_types: tuple[str, ...] = ("tpm-tee", "tee-tpm", "tee", "tpm")
    token_lifetime: float = DEFAULT_TOKEN_LIFETIME


@dataclass
class AttestationRequest:
    """One attestation session: a nonce bound to (verifier, node)."""

    session_id: bytes
    node_id: str
    policy_id: str
    nonce: bytes
    pcr_selection: tuple[int, ...]
    created_at: float
    completed: bool = False


@dataclass(frozen=True)
class NodeKeys:
    """Verifier-side identity material for one registered node."""

    node_id: str
    chip_id: bytes
    aik_pub: bytes
    vcek_pub: bytes


@dataclass(frozen=True)
class VerifiedReport:
    """Proof that verify_composite accepted some evidence. Only this
    module creates instances; issue_token refuses anything else."""

    session_id: bytes
    node_id: str
    token_type: str
    evidence: bytes
    tcb_version: int
    measurement: bytes
    pcr_selection: tuple[int, ...]
    pcr_digest: bytes


# ---------------------------------------------------------------------------
# token format
# ---------------------------------------------------------------------------

def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class AttestationToken:
    header: dict
    payload: dict
    signature: bytes

    def signing_input(self) -> bytes:
        return (b64url_encode(_canon_json(self.header)) + "."
                + b64url_encode(_canon_json(self.payload))).encode("ascii")

    def compact(self) -> str:
        return (b64url_encode(_canon_json(self.header)) + "."
                + b64url_encode(_canon_json(self.payload)) + "."
                + b64url_encode(self.signature))

    @classmethod
    def parse(cls, text: str) -> "AttestationToken":
        parts = text.split(".")
        if len(parts) != 3:
            raise DecodeError("token must have three segments")
        try:
            header = json.loads(b64url_decode(parts[0]))
            payload = json.loads(b64url_decode(parts[1]))
        except (ValueError, DecodeError) as exc:
            raise DecodeError("token segments are not valid json") from exc
        if not isinstance(header, dict) or not isinstance(payload, dict):
            raise DecodeError("token segments must be objects")
        return cls(header, payload, b64url_decode(parts[2]))


_REQUIRED_HEADER = ("alg", "ver", "kid", "iat", "exp")
_REQUIRED_PAYLOAD = ("type", "serial", "report", "platform", "policy")


def validate_token(token: "AttestationToken | str", verifier_pub: bytes,
                   now: float, *, is_revoked=None,
                   issued_serials=None) -> dict | TokenRejection:
    """Full token check: structure, signature, expiry, then revocation.

    Returns the claims on success, or the first applicable rejection.
    When an issuance log is supplied, a verifying token whose serial was
    never issued is treated as a forgery.
    """
    if isinstance(token, str):
        try:
            token = AttestationToken.parse(token)
        except DecodeError:
            return TokenRejection.MALFORMED
    if any(k not in token.header for k in _REQUIRED_HEADER):
        return TokenRejection.MALFORMED
    if any(k not in token.payload for k in _REQUIRED_PAYLOAD):
        return TokenRejection.MALFORMED
    if token.header["alg"] != "ES256" or token.header["ver"] != TOKEN_FORMAT_VERSION:
        return TokenRejection.MALFORMED
    try:
        if not crypto.verify(verifier_pub, token.signing_input(), token.signature):
            return TokenRejection.BAD_SIGNATURE
    except MalformedSignature:
        return TokenRejection.BAD_SIGNATURE
    if now > float(token.header["exp"]):
        return TokenRejection.EXPIRED
    if issued_serials is not None and token.payload["serial"] not in issued_serials:
        return TokenRejection.BAD_SIGNATURE
    if is_revoked is not None and is_revoked(token.payload["platform"]["node"]):
        return TokenRejection.REVOKED_NODE
    return {"header": dict(token.header), "payload": dict(token.payload)}


# ---------------------------------------------------------------------------
# the service
# ---------------------------------------------------------------------------

class VerifierService:
    def __init__(self, *, verifier_id: str = "verifier", clock=None, rng=None,
                 revocation=None) -> None:
        self.verifier_id = verifier_id
        self.clock = clock if clock is not None else SystemClock()
        self.rng = rng if rng is not None else crypto.SystemRng()
        self.key = crypto.SigningKeyPair.from_seed(
            "VERIFIER", self.rng.random_bytes(32))
        if revocation is None:
            self._is_revoked = lambda node_id: False
        elif callable(revocation):
            self._is_revoked = revocation
        else:
            self._is_revoked = revocation.is_revoked
        self.policies: dict[str, PolicyBaseline] = {}
        self._nodes: dict[str, NodeKeys] = {}
        self._sessions: dict[bytes, AttestationRequest] = {}
        self._nonces_seen: set[bytes] = set()
        self._issued: dict[int, dict] = {}
        self._next_serial = 1
        self._lock = threading.RLock()
        self._verify_cache: dict[tuple[bytes, bytes, bytes], bool] = {}

    @property
    def public_bytes(self) -> bytes:
        return self.key.public_bytes

    def add_policy(self, policy: PolicyBaseline) -> None:
        with self._lock:
            self.policies[policy.policy_id] = policy

    def get_policy(self, policy_id: str) -> PolicyBaseline:
        policy = self.policies.get(policy_id)
        if policy is None:
            raise KeyError(f"unknown policy {policy_id!r}")
        return policy

    def register_node_keys(self, node_id: str, chip_id: bytes, aik_pub: bytes,
                           vcek_pub: bytes, *, aik_cert=None, vcek_cert=None,
                           oca_pub: bytes | None = None) -> None:
        """Record a node's attestation keys, checking the owner CA's
        certificates when they are supplied."""
        if oca_pub is not None:
            if aik_cert is not None and not (aik_cert.verify(oca_pub)
                                             and aik_cert.subject == aik_pub):
                raise ChainInvalid("AIK certificate does not verify under the owner CA")
            if vcek_cert is not None and not (vcek_cert.verify(oca_pub)
                                              and vcek_cert.subject == vcek_pub):
                raise ChainInvalid("VCEK certificate does not verify under the owner CA")
        with self._lock:
            self._nodes[node_id] = NodeKeys(node_id, chip_id, aik_pub, vcek_pub)

    def node_keys(self, node_id: str) -> NodeKeys | None:
        with self._lock:
            return self._nodes.get(node_id)

    def session(self, session_id: bytes) -> AttestationRequest | None:
        with self._lock:
            return self._sessions.get(session_id)

    @property
    def nonces_issued(self) -> int:
        with self._lock:
            return len(self._nonces_seen)

    # -- sessions -------------------------------------------------------------

    def new_request(self, policy_id: str, node_id: str) -> AttestationRequest:
        """Open a session with a fresh nonce. Refused for revoked nodes."""
        policy = self.get_policy(policy_id)
        if self._is_revoked(node_id):
            raise NodeRevoked(f"node {node_id!r} is revoked")
        with self._lock:
            nonce = self.rng.random_bytes(32)
            if nonce in self._nonces_seen:
                raise CcxError("nonce collision; generator is unhealthy")
            self._nonces_seen.add(nonce)
            session_id = crypto.sha256(
                nonce + self.verifier_id.encode() + node_id.encode())
            request = AttestationRequest(
                session_id=session_id, node_id=node_id, policy_id=policy_id,
                nonce=nonce, pcr_selection=policy.pcr_selection,
                created_at=self.clock.now())
            self._sessions[session_id] = request
        return request

    # -- composite verification ------------------------------------------------

    def verify_composite(self, envelope: "CompositeReportEnvelope",
                         session: AttestationRequest,
                         policy: PolicyBaseline
                         ) -> tuple[CompositeOutcome, VerifiedReport | None]:
        """Check a composite envelope layer by layer; first failure wins.

        Order: session binding, outer signature, inner signature, nonce
        binding, identity join, launch measurement, PCR composite, TCB
        floor, revocation.
        """
        if session.completed:
            return CompositeOutcome.SESSION_REPLAY, None
        if envelope.session_id != session.session_id:
            return CompositeOutcome.NONCE_MISMATCH, None
        node = self.node_keys(session.node_id)
        if node is None:
            return CompositeOutcome.MALFORMED, None
        if envelope.direction == "tpm-tee":
            result = self._check_tpm_outer(envelope, session, policy, node)
        elif envelope.direction == "tee-tpm":
            result = self._check_tee_outer(envelope, session, policy, node)
        else:
            return CompositeOutcome.MALFORMED, None
        outcome, verified = result
        if outcome is CompositeOutcome.OK:
            with self._lock:
                session.completed = True
        return outcome, verified

    def _check_tpm_outer(self, envelope, session, policy, node):
        try:
            quote_obj = tpm.CompositeQuote.from_bytes(envelope.evidence)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        outer_owner = self._quote_signer(quote_obj, node)
        if outer_owner is None:
            return CompositeOutcome.OUTER_SIGNATURE_INVALID, None
        if not quote_obj.tee_report:
            return CompositeOutcome.MALFORMED, None
        try:
            report = tee.TeeReport.from_bytes(quote_obj.tee_report)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        inner_owner = self._report_signer(report, node)
        if inner_owner is None:
            return CompositeOutcome.INNER_SIGNATURE_INVALID, None
        expected_data = crypto.sha256(session.nonce) + REPORT_DATA_PAD
        if quote_obj.qualifying_data != session.nonce \
                or report.report_data != expected_data:
            return CompositeOutcome.NONCE_MISMATCH, None
        if outer_owner is not node or inner_owner is not node \
                or report.chip_id != node.chip_id:
            return CompositeOutcome.IDENTITY_MISMATCH, None
        return self._check_platform(envelope, session, policy,
                                    report.launch_measurement,
                                    quote_obj.pcr_selection, quote_obj.pcr_digest,
                                    report.tcb_version)

    def _check_tee_outer(self, envelope, session, policy, node):
        try:
            report = tee.TeeReport.from_bytes(envelope.evidence)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        outer_owner = self._report_signer(report, node)
        if outer_owner is None:
            return CompositeOutcome.OUTER_SIGNATURE_INVALID, None
        if not report.embedded_evidence:
            return CompositeOutcome.MALFORMED, None
        try:
            quote_obj = tpm.CompositeQuote.from_bytes(report.embedded_evidence)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        inner_owner = self._quote_signer(quote_obj, node)
        if inner_owner is None:
            return CompositeOutcome.INNER_SIGNATURE_INVALID, None
        expected_data = session.nonce + crypto.sha256(report.embedded_evidence)
        if report.report_data != expected_data \
                or quote_obj.qualifying_data != session.nonce:
            return CompositeOutcome.NONCE_MISMATCH, None
        if outer_owner is not node or inner_owner is not node \
                or report.chip_id != node.chip_id:
            return CompositeOutcome.IDENTITY_MISMATCH, None
        return self._check_platform(envelope, session, policy,
                                    report.launch_measurement,
                                    quote_obj.pcr_selection, quote_obj.pcr_digest,
                                    report.tcb_version)

    def _check_platform(self, envelope, session, policy, measurement,
                        pcr_selection, pcr_digest, tcb_version):
        if measurement != policy.expected_measurement:
            return CompositeOutcome.MEASUREMENT_MISMATCH, None
        if pcr_selection != policy.pcr_selection \
                or pcr_digest != policy.expected_pcr_composite:
            return CompositeOutcome.PCR_MISMATCH, None
        if tcb_version < policy.min_tcb_version:
            return CompositeOutcome.TCB_REJECTED, None
        if self._is_revoked(session.node_id):
            return CompositeOutcome.NODE_REVOKED, None
        verified = VerifiedReport(
            session_id=session.session_id, node_id=session.node_id,
            token_type=envelope.direction, evidence=envelope.evidence,
            tcb_version=tcb_version, measurement=measurement,
            pcr_selection=pcr_selection, pcr_digest=pcr_digest)
        return CompositeOutcome.OK, verified

    def _cached_verify(self, public: bytes, message: bytes,
                       signature: bytes) -> bool:
        """Signature check with memoization; the identity scan re-tries
        the same (key, message, signature) triples constantly."""
        cache_key = (public, crypto.sha256(message), signature)
        with self._lock:
            hit = self._verify_cache.get(cache_key)
        if hit is not None:
            return hit
        try:
            result = crypto.verify(public, message, signature)
        except MalformedSignature:
            result = False
        with self._lock:
            if len(self._verify_cache) >= 1 << 17:
                self._verify_cache.clear()
            self._verify_cache[cache_key] = result
        return result

    def _quote_signer(self, quote_obj: tpm.CompositeQuote,
                      claimed: NodeKeys) -> NodeKeys | None:
        """The registered node whose AIK signed this quote, if any.

        The claimed node is tried first; the deterministic scan afterwards
        is what lets a valid-but-foreign signature be reported as an
        identity mismatch instead of a bare signature failure.
        """
        body = quote_obj.body_bytes()
        if self._cached_verify(claimed.aik_pub, body, quote_obj.signature):
            return claimed
        with self._lock:
            others = [self._nodes[n] for n in sorted(self._nodes) if n != claimed.node_id]
        for keys in others:
            if self._cached_verify(keys.aik_pub, body, quote_obj.signature):
                return keys
        return None

    def _report_signer(self, report: tee.TeeReport,
                       claimed: NodeKeys) -> NodeKeys | None:
        body = report.body_bytes()
        if self._cached_verify(claimed.vcek_pub, body, report.signature):
            return claimed
        with self._lock:
            others = [self._nodes[n] for n in sorted(self._nodes) if n != claimed.node_id]
        for keys in others:
            if self._cached_verify(keys.vcek_pub, body, report.signature):
                return keys
        return None

    # -- single-technology verification (independent baseline) -----------------

    def verify_tee_report(self, report_bytes: bytes, session: AttestationRequest,
                          policy: PolicyBaseline
                          ) -> tuple[CompositeOutcome, VerifiedReport | None]:
        """TEE-only attestation check, used by the independent baseline."""
        if session.completed:
            return CompositeOutcome.SESSION_REPLAY, None
        node = self.node_keys(session.node_id)
        if node is None:
            return CompositeOutcome.MALFORMED, None
        try:
            report = tee.TeeReport.from_bytes(report_bytes)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        owner = self._report_signer(report, node)
        if owner is None:
            return CompositeOutcome.OUTER_SIGNATURE_INVALID, None
        if report.report_data != session.nonce + REPORT_DATA_PAD:
            return CompositeOutcome.NONCE_MISMATCH, None
        if owner is not node or report.chip_id != node.chip_id:
            return CompositeOutcome.IDENTITY_MISMATCH, None
        if report.launch_measurement != policy.expected_measurement:
            return CompositeOutcome.MEASUREMENT_MISMATCH, None
        if report.tcb_version < policy.min_tcb_version:
            return CompositeOutcome.TCB_REJECTED, None
        if self._is_revoked(session.node_id):
            return CompositeOutcome.NODE_REVOKED, None
        with self._lock:
            session.completed = True
        verified = VerifiedReport(
            session_id=session.session_id, node_id=session.node_id,
            token_type="tee", evidence=report_bytes,
            tcb_version=report.tcb_version, measurement=report.launch_measurement,
            pcr_selection=(), pcr_digest=b"")
        return CompositeOutcome.OK, verified

    def verify_tpm_quote(self, quote_bytes: bytes, session: AttestationRequest,
                         policy: PolicyBaseline
                         ) -> tuple[CompositeOutcome, VerifiedReport | None]:
        """TPM-only attestation check, used by the independent baseline."""
        if session.completed:
            return CompositeOutcome.SESSION_REPLAY, None
        node = self.node_keys(session.node_id)
        if node is None:
            return CompositeOutcome.MALFORMED, None
        try:
            quote_obj = tpm.CompositeQuote.from_bytes(quote_bytes)
        except CcxError:
            return CompositeOutcome.MALFORMED, None
        owner = self._quote_signer(quote_obj, node)
        if owner is None:
            return CompositeOutcome.OUTER_SIGNATURE_INVALID, None
        if quote_obj.qualifying_data != session.nonce:
            return CompositeOutcome.NONCE_MISMATCH, None
        if owner is not node:
            return CompositeOutcome.IDENTITY_MISMATCH, None
        if quote_obj.pcr_selection != policy.pcr_selection \
                or quote_obj.pcr_digest != policy.expected_pcr_composite:
            return CompositeOutcome.PCR_MISMATCH, None
        if self._is_revoked(session.node_id):
            return CompositeOutcome.NODE_REVOKED, None
        with self._lock:
            session.completed = True
        verified = VerifiedReport(
            session_id=session.session_id, node_id=session.node_id,
            token_type="tpm", evidence=quote_bytes,
            tcb_version=0, measurement=b"",
            pcr_selection=quote_obj.pcr_selection, pcr_digest=quote_obj.pcr_digest)
        return CompositeOutcome.OK, verified

    # -- tokens ----------------------------------------------------------------

    def issue_token(self, session: AttestationRequest, verified: VerifiedReport,
                    policy: PolicyBaseline) -> AttestationToken:
        """Mint a bearer token for verified evidence.

        The VerifiedReport type gate is the soundness hook: there is no
        public constructor path that has not been through verification.
        """
        if not isinstance(verified, VerifiedReport):
            raise TypeError("issue_token requires a VerifiedReport")
        if verified.session_id != session.session_id:
            raise ValueError("verified report belongs to a different session")
        if verified.token_type not in policy.allowed_types:
            raise ValueError(f"policy forbids token type {verified.token_type!r}")
        now = self.clock.now()
        with self._lock:
            serial = self._next_serial
            self._next_serial += 1
            header = {
                "alg": "ES256",
                "ver": TOKEN_FORMAT_VERSION,
                "kid": crypto.sha256(self.key.public_bytes)[:8].hex(),
                "iat": int(now),
                "exp": int(now + policy.token_lifetime),
            }
            payload = {
                "type": verified.token_type,
                "serial": serial,
                "report": b64url_encode(verified.evidence),
                "platform": {
                    "node": verified.node_id,
                    "tcb": verified.tcb_version,
                    "pcr_sel": list(verified.pcr_selection),
                },
                "policy": policy.policy_id,
            }
            unsigned = AttestationToken(header, payload, b"")
            token = AttestationToken(header, payload,
                                     self.key.sign(unsigned.signing_input()))
            self._issued[serial] = {
                "node": verified.node_id,
                "type": verified.token_type,
                "exp": header["exp"],
                "digest": crypto.sha256(token.compact().encode()).hex(),
            }
        return token

    def validate_token(self, token: "AttestationToken | str",
                       now: float | None = None) -> dict | TokenRejection:
        if now is None:
            now = self.clock.now()
        with self._lock:
            issued = frozenset(self._issued)
        return validate_token(token, self.key.public_bytes, now,
                              is_revoked=self._is_revoked,
                              issued_serials=issued)

    @property
    def issued_serials(self) -> frozenset[int]:
        with self._lock:
            return frozenset(self._issued)
