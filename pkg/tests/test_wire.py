import threading

import numpy as np
import pytest

from certdp.wire import (MAX_PAYLOAD, ChannelClosed, Frame, Msg, NetProfile,
                         PROFILES, PipeChannel, TcpChannel, decode_frame,
                         network_delay, pack_bits, pack_residues,
                         parse_net_profile, simulate, unpack_bits,
                         unpack_residues)


def test_frame_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        payload = rng.integers(0, 256, int(rng.integers(0, 2000)),
                               dtype=np.uint8).tobytes()
        f = Frame(int(rng.integers(1, 16)), int(rng.integers(0, 1 << 63)),
                  payload)
        assert decode_frame(f.encode()) == f


def test_oversize_frame_rejected_before_send():
    f = Frame(Msg.DATA_COMMIT, 1, b"x" * (MAX_PAYLOAD + 1))
    with pytest.raises(ValueError):
        f.encode()


def test_pipe_channel_roundtrip():
    a, b = PipeChannel.pair()
    a.send(Frame(Msg.HELLO_PARAMS, 7, b"hello"))
    got = b.recv()
    assert got.payload == b"hello" and got.session_id == 7
    a.close()
    with pytest.raises(ChannelClosed):
        b.recv()


def test_soak_10k_frames_no_loss_no_reorder():
    # sequence numbers carried in the payload; simulated link in between
    a, b, clock = simulate(PROFILES["lan"])
    n = 10_000
    errors = []

    def sender():
        for i in range(n):
            a.send(Frame(Msg.DATA_COMMIT, 1, i.to_bytes(4, "little")))

    def receiver():
        for i in range(n):
            f = b.recv()
            if int.from_bytes(f.payload, "little") != i:
                errors.append(i)

    ts, tr = threading.Thread(target=sender), threading.Thread(target=receiver)
    ts.start(); tr.start(); ts.join(); tr.join()
    assert not errors
    assert clock.elapsed > 0


def test_tcp_channel_loopback():
    srv = TcpChannel.listen("127.0.0.1", 0)
    port = srv.getsockname()[1]
    out = {}

    def server():
        chan = TcpChannel.accept(srv)
        out["got"] = chan.recv()
        chan.send(Frame(Msg.PARAMS_ACK, 2, b"ack"))
        chan.close()

    t = threading.Thread(target=server)
    t.start()
    cli = TcpChannel.connect("127.0.0.1", port)
    cli.send(Frame(Msg.HELLO_PARAMS, 2, b"syn"))
    reply = cli.recv()
    t.join()
    cli.close()
    srv.close()
    assert out["got"].payload == b"syn" and reply.payload == b"ack"


def test_simulator_zero_overhead_profile():
    prof = NetProfile("ideal", float("inf"), 0.0)
    assert prof.serialization_s(10**9) == 0.0
    assert network_delay([("send", 1000)] * 5, prof) == 0.0


def test_simulator_serialization_delay_1mib_100mbit():
    prof = PROFILES["wan100"]
    assert prof.serialization_s(1 << 20) >= 0.0839


def test_profile_parsing():
    assert parse_net_profile("lan").rtt_ms == 2.0
    assert parse_net_profile("wan200").bandwidth_mbit == 200.0
    custom = parse_net_profile("custom:50:10")
    assert custom.bandwidth_mbit == 50.0 and custom.rtt_ms == 10.0
    with pytest.raises(ValueError):
        parse_net_profile("dialup")


def test_network_delay_ordering_on_fixed_trace():
    trace = [("send", 5000), ("recv", 300), ("send", 5000), ("recv", 300)]
    times = {name: network_delay(trace, prof)
             for name, prof in PROFILES.items()}
    assert times["localhost"] <= times["lan"] <= times["wan200"] \
        <= times["wan100"]


def test_residue_and_bit_codecs():
    vals = [0, 1, 12345, (1 << 89) - 2]
    blob = pack_residues(vals, 12)
    assert unpack_residues(blob, 12) == vals
    bits = [1, 0, 1, 1, 0, 0, 0, 1, 1]
    assert unpack_bits(pack_bits(bits), len(bits)) == bits
