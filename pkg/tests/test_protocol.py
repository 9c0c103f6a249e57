"""Protocol layer: trace recording, sealed channels, the initialization
and attestation flows, and the trace-property checker."""

import pytest

from ccxtrust import crypto, harness, protocol
from ccxtrust.errors import AttestationRejected, AuthFailure, DecodeError


@pytest.fixture()
def cluster():
    return harness.build_cluster(77, nodes=1)


@pytest.fixture()
def cluster2():
    return harness.build_cluster(78, nodes=2)


# ---------------------------------------------------------------------------
# trace events
# ---------------------------------------------------------------------------

def test_trace_event_line_round_trip():
    event = protocol.TraceEvent(
        3, "node0000/tpm", "sign", peer="-",
        digest=crypto.sha256(b"x").hex(), tag="total-report", ok=True,
        contents=("session:" + "ab" * 32, "quote:" + "cd" * 32))
    parsed = protocol.TraceEvent.from_line(event.line())
    assert parsed == event


def test_trace_event_defaults_round_trip():
    event = protocol.TraceEvent(0, "verifier", "new")
    parsed = protocol.TraceEvent.from_line(event.line())
    assert parsed == event
    assert parsed.peer == "-"
    assert parsed.ok is None
    assert parsed.contents == ()


def test_trace_text_round_trip_and_digest(cluster):
    trace = cluster.trace
    assert len(trace.events) > 0
    text = trace.text()
    parsed = protocol.ProtocolTrace.from_text(text)
    assert parsed.events == trace.events
    assert parsed.digest() == trace.digest()


def test_trace_from_text_rejects_gap(cluster):
    lines = cluster.trace.lines()
    del lines[2]
    with pytest.raises(DecodeError):
        protocol.ProtocolTrace.from_text("\n".join(lines))


def test_trace_write_read(tmp_path, cluster):
    path = tmp_path / "trace.log"
    cluster.trace.write(path)
    loaded = protocol.ProtocolTrace.read(path)
    assert loaded.digest() == cluster.trace.digest()


def test_base_principal_folds_engine_names():
    assert protocol.base_principal("node0001/tpm") == "node0001"
    assert protocol.base_principal("node0001/tee") == "node0001"
    assert protocol.base_principal("verifier") == "verifier"


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def test_channel_seal_open_and_wrong_receiver(cluster):
    channels = cluster.channels
    actor = cluster.actor(0)
    mtype = protocol.MESSAGE_TYPES["attest-request"]
    frame = channels.seal(mtype, actor.agent, "verifier", b"sess", b"body")
    opened = channels.open(frame, "verifier")
    assert opened.body == b"body"
    assert opened.sender == actor.agent
    assert opened.session_id == b"sess"
    assert opened.type_name == "attest-request"
    with pytest.raises(AuthFailure):
        channels.open(frame, actor.tee_name)


def test_channel_frame_tamper_rejected(cluster):
    channels = cluster.channels
    actor = cluster.actor(0)
    mtype = protocol.MESSAGE_TYPES["attest-request"]
    frame = bytearray(channels.seal(mtype, actor.agent, "verifier",
                                    b"sess", b"body"))
    frame[-1] ^= 0x01
    with pytest.raises(AuthFailure):
        channels.open(bytes(frame), "verifier")


def test_channel_missing_key_raises(cluster):
    with pytest.raises(AuthFailure):
        cluster.channels.key("nobody", "verifier")


def test_tpm_backed_and_software_channels_coexist(cluster):
    actor = cluster.actor(0)
    for pair in ((actor.tpm_name, "verifier"), (actor.tee_name, actor.agent),
                 (actor.agent, protocol.OCA_PRINCIPAL),
                 (protocol.OCA_PRINCIPAL, protocol.VERIFIER_PRINCIPAL)):
        key = cluster.channels.key(*pair)
        assert len(key) == 32
        assert cluster.channels.key(*reversed(pair)) == key


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

def test_initialization_registers_keys_and_certs(cluster):
    actor = cluster.actor(0)
    node = cluster.verifier_svc.node_keys(actor.node_id)
    assert node is not None
    assert node.aik_pub == actor.aik_blob.public
    assert node.vcek_pub == actor.vcek.public_bytes
    assert node.chip_id == actor.chip_id
    assert actor.vcek_cert is not None and actor.aik_cert is not None
    assert actor.identity_cert is not None and actor.pek_cert is not None
    assert actor.vcek_cert.verify(cluster.oca.public_bytes)
    assert actor.aik_cert.verify(cluster.oca.public_bytes)
    assert actor.identity_cert.verify(cluster.oca.public_bytes)
    # the platform endorsement cert chains to the chip key, not the CA
    assert actor.pek_cert.verify(actor.vcek.public_bytes)
    assert actor.master_secret is not None


def test_attest_composite_both_directions(cluster):
    for direction in ("tpm-tee", "tee-tpm"):
        trace = protocol.ProtocolTrace()
        token = protocol.run_attest_composite(
            cluster.actor(0), cluster.verifier_svc, cluster.channels, trace,
            policy_id=cluster.policy_id, direction=direction)
        claims = cluster.verifier_svc.validate_token(token.compact())
        assert isinstance(claims, dict)
        assert claims["payload"]["type"] == direction
        assert trace.verifier_visible_sends() == 3


def test_attest_single_and_independent(cluster):
    trace = protocol.ProtocolTrace()
    tokens = protocol.run_attest_independent(
        cluster.actor(0), cluster.verifier_svc, cluster.channels, trace,
        policy_id=cluster.policy_id)
    assert [t.payload["type"] for t in tokens] == ["tee", "tpm"]
    assert trace.verifier_visible_sends() == 6
    for token in tokens:
        assert isinstance(cluster.verifier_svc.validate_token(token.compact()),
                          dict)


def test_attest_rejection_raises_with_outcome(cluster):
    from ccxtrust import verifier

    def sabotage(envelope):
        import dataclasses
        return dataclasses.replace(envelope, evidence=b"junk")

    trace = protocol.ProtocolTrace()
    with pytest.raises(AttestationRejected) as info:
        protocol.run_attest_composite(
            cluster.actor(0), cluster.verifier_svc, cluster.channels, trace,
            policy_id=cluster.policy_id, evidence_mutator=sabotage)
    assert info.value.cause is verifier.CompositeOutcome.MALFORMED


# ---------------------------------------------------------------------------
# theorem checking
# ---------------------------------------------------------------------------

def attested_trace(cluster):
    trace = protocol.ProtocolTrace()
    trace.extend_reindexed(cluster.trace.events)
    protocol.run_attest_composite(
        cluster.actor(0), cluster.verifier_svc, cluster.channels, trace,
        policy_id=cluster.policy_id)
    return trace


def test_honest_trace_passes_all_theorems(cluster):
    verdicts = protocol.check_theorems(attested_trace(cluster))
    assert set(verdicts) == {"cert-provenance", "token-provenance",
                             "attest-order"}
    for verdict in verdicts.values():
        assert verdict.ok, verdict.line()


def test_theorem_verdict_lines_are_parseable(cluster):
    for verdict in protocol.check_theorems(attested_trace(cluster)).values():
        line = verdict.line()
        assert line.split()[0] == verdict.name
        assert line.split()[1] == "pass"


def test_checker_works_from_serialized_trace(cluster):
    text = attested_trace(cluster).text()
    reloaded = protocol.ProtocolTrace.from_text(text)
    verdicts = protocol.check_theorems(reloaded)
    assert all(v.ok for v in verdicts.values())


def test_forged_cert_fails_exactly_cert_provenance(cluster2):
    trace = harness.fault_trace_forged_cert(cluster2)
    verdicts = protocol.check_theorems(trace)
    assert not verdicts["cert-provenance"].ok
    assert verdicts["token-provenance"].ok
    assert verdicts["attest-order"].ok
    assert verdicts["cert-provenance"].witness


def test_forged_token_fails_exactly_token_provenance(cluster2):
    trace = harness.fault_trace_forged_token(cluster2)
    verdicts = protocol.check_theorems(trace)
    assert verdicts["cert-provenance"].ok
    assert not verdicts["token-provenance"].ok
    assert verdicts["attest-order"].ok


def test_reordered_sign_fails_exactly_attest_order(cluster2):
    trace = harness.fault_trace_reordered_sign(cluster2)
    verdicts = protocol.check_theorems(trace)
    assert verdicts["cert-provenance"].ok
    assert verdicts["token-provenance"].ok
    assert not verdicts["attest-order"].ok
