"""Loopback integration tests for the dual-link endpoint."""

from __future__ import annotations

import time

import pytest

from nethelpers import FakePeer, drain_messages, free_port, next_event, wait_until
from ridelink.messages import DisengagementRequest, Envelope, EventFlag
from ridelink.transport import (
    BindFailed,
    ConfigError,
    Endpoint,
    EndpointConfig,
    MessageReceived,
    PeerConnected,
    PeerDisconnected,
    QueueFull,
)

INTERVAL = 100
TIMEOUT = 400
RECONNECT = 150


def make_config(peer_port: int, bind_port: int) -> EndpointConfig:
    return EndpointConfig(
        peer_server_address=("127.0.0.1", peer_port),
        local_bind_address=("127.0.0.1", bind_port),
        heartbeat_interval_ms=INTERVAL,
        heartbeat_timeout_ms=TIMEOUT,
        reconnect_delay_ms=RECONNECT,
    )


@pytest.fixture
def endpoint_pair():
    port_a, port_b = free_port(), free_port()
    a = Endpoint(make_config(peer_port=port_b, bind_port=port_a)).start()
    b = Endpoint(make_config(peer_port=port_a, bind_port=port_b)).start()
    yield a, b
    a.stop()
    b.stop()


@pytest.fixture
def endpoint_with_fake_peer():
    peer_port, bind_port = free_port(), free_port()
    ep = Endpoint(make_config(peer_port=peer_port, bind_port=bind_port)).start()
    peer = FakePeer(listen_port=peer_port, endpoint_server_port=bind_port).start()
    yield ep, peer
    peer.close()
    ep.stop()


class TestConfig:
    def test_timeout_must_exceed_interval(self):
        with pytest.raises(ConfigError):
            EndpointConfig(
                peer_server_address=("127.0.0.1", 1),
                local_bind_address=("127.0.0.1", 0),
                heartbeat_interval_ms=500,
                heartbeat_timeout_ms=500,
            )

    def test_durations_must_be_positive(self):
        with pytest.raises(ConfigError):
            EndpointConfig(
                peer_server_address=("127.0.0.1", 1),
                local_bind_address=("127.0.0.1", 0),
                reconnect_delay_ms=0,
            )

    def test_bind_failed(self):
        port = free_port()
        cfg = make_config(peer_port=free_port(), bind_port=port)
        first = Endpoint(cfg).start()
        try:
            with pytest.raises(BindFailed):
                Endpoint(make_config(peer_port=free_port(), bind_port=port)).start()
        finally:
            first.stop()


class TestConnection:
    def test_both_sides_emit_peer_connected(self, endpoint_pair):
        a, b = endpoint_pair
        deadline = 2 * RECONNECT / 1000
        assert isinstance(next_event(a, deadline), PeerConnected)
        assert isinstance(next_event(b, deadline), PeerConnected)

    def test_no_peer_means_no_events_and_disconnected_status(self):
        ep = Endpoint(make_config(peer_port=free_port(), bind_port=free_port())).start()
        try:
            time.sleep(0.3)
            assert ep.events.empty()
            status = ep.connection_status()
            assert status.connected is False
            assert status.last_heartbeat_received_ms is None
        finally:
            ep.stop()

    def test_status_true_after_sustained_heartbeats(self, endpoint_pair):
        a, _b = endpoint_pair
        assert wait_until(lambda: a.connection_status().connected, timeout=1.0)
        time.sleep(0.3)
        assert a.connection_status().connected is True

    def test_peer_kill_detected_within_bound(self, endpoint_pair):
        a, b = endpoint_pair
        assert isinstance(next_event(a, 1.0), PeerConnected)
        start = time.monotonic()
        b.stop()
        ev = next_event(a, (TIMEOUT + INTERVAL) / 1000 + 0.5)
        elapsed = time.monotonic() - start
        assert isinstance(ev, PeerDisconnected)
        assert elapsed <= (TIMEOUT + INTERVAL) / 1000 + 0.25

    def test_reconnect_after_peer_restart(self, endpoint_pair):
        a, b = endpoint_pair
        assert isinstance(next_event(a, 1.0), PeerConnected)
        port_b = b.config.local_bind_address[1]
        port_a = a.config.local_bind_address[1]
        b.stop()
        assert isinstance(next_event(a, 2.0), PeerDisconnected)
        b2 = Endpoint(make_config(peer_port=port_a, bind_port=port_b)).start()
        try:
            assert isinstance(next_event(a, 3.0), PeerConnected)
        finally:
            b2.stop()


class TestHeartbeatLiveness:
    def test_suppressed_heartbeats_flip_status_false_then_resume(self, endpoint_with_fake_peer):
        ep, peer = endpoint_with_fake_peer
        assert wait_until(lambda: ep.connection_status().connected, timeout=2.0)

        peer.heartbeats_enabled = False
        start = time.monotonic()
        assert wait_until(
            lambda: not ep.connection_status().connected, timeout=(TIMEOUT + INTERVAL) / 1000
        )
        assert time.monotonic() - start <= (TIMEOUT + INTERVAL) / 1000

        peer.heartbeats_enabled = True
        start = time.monotonic()
        assert wait_until(lambda: ep.connection_status().connected, timeout=INTERVAL / 1000 + 0.15)

    def test_silence_emits_disconnect_edge_then_reconnect_edge(self, endpoint_with_fake_peer):
        ep, peer = endpoint_with_fake_peer
        assert isinstance(next_event(ep, 2.0), PeerConnected)
        peer.heartbeats_enabled = False
        assert isinstance(next_event(ep, (TIMEOUT + INTERVAL) / 1000 + 0.3), PeerDisconnected)
        peer.heartbeats_enabled = True
        assert isinstance(next_event(ep, 1.0), PeerConnected)

    def test_endpoint_heartbeat_timestamps_non_decreasing(self, endpoint_with_fake_peer):
        ep, peer = endpoint_with_fake_peer
        assert wait_until(lambda: len(peer.heartbeat_timestamps) >= 5, timeout=3.0)
        stamps = list(peer.heartbeat_timestamps)
        assert stamps == sorted(stamps)


class TestSendPath:
    def test_message_delivered_to_peer(self, endpoint_pair):
        a, b = endpoint_pair
        assert isinstance(next_event(a, 1.0), PeerConnected)
        env = Envelope.of(EventFlag(event_seq=1))
        a.send(env)
        assert drain_messages(b, 1, timeout=1.0) == [env]

    def test_fifo_order_preserved(self, endpoint_pair):
        a, b = endpoint_pair
        assert isinstance(next_event(a, 1.0), PeerConnected)
        sent = [Envelope.of(EventFlag(event_seq=i)) for i in range(1, 51)]
        for env in sent:
            a.send(env)
        assert drain_messages(b, 50, timeout=3.0) == sent

    def test_queue_full_after_1024_unsent(self):
        ep = Endpoint(make_config(peer_port=free_port(), bind_port=free_port())).start()
        try:
            env = Envelope.of(EventFlag(event_seq=1))
            for _ in range(1024):
                ep.send(env)
            with pytest.raises(QueueFull):
                ep.send(env)
        finally:
            ep.stop()

    def test_send_while_disconnected_delivered_after_reconnect(self, endpoint_pair):
        a, b = endpoint_pair
        assert isinstance(next_event(a, 1.0), PeerConnected)
        port_b = b.config.local_bind_address[1]
        port_a = a.config.local_bind_address[1]
        b.stop()
        assert isinstance(next_event(a, 2.0), PeerDisconnected)

        first = Envelope.of(DisengagementRequest(lateral_seq=1, longitudinal_seq=1))
        a.send(first)
        later = Envelope.of(EventFlag(event_seq=2))
        a.send(later)

        b2 = Endpoint(make_config(peer_port=port_a, bind_port=port_b)).start()
        try:
            assert isinstance(next_event(a, 3.0), PeerConnected)
            assert drain_messages(b2, 2, timeout=2.0) == [first, later]
        finally:
            b2.stop()


class TestCorruptFrame:
    def test_corrupt_inbound_frame_drops_connection_not_endpoint(self, endpoint_with_fake_peer):
        ep, peer = endpoint_with_fake_peer
        assert isinstance(next_event(ep, 2.0), PeerConnected)
        peer.send_garbage()
        assert isinstance(next_event(ep, 2.0), PeerDisconnected)
        # client loop reconnects to the fake peer and heartbeats resume
        assert isinstance(next_event(ep, 3.0), PeerConnected)
        assert wait_until(lambda: ep.connection_status().connected, timeout=1.0)
