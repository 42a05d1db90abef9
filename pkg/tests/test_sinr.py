import math

import numpy as np
import pytest

from modules.sinr import (
    DegenerateGeometryError, Packet, RangeClass, SinrParams, address_radius,
    broadcast_range, deliverable_set, emitted_power, sinr_feasible, transmission_range,
)


def _packet(origin, pos, start=0.0, bid=None, range_class=RangeClass.R1):
    return Packet(origin=origin, origin_pos=pos, broadcast_id=origin if bid is None else bid,
                  start=start, end=start + 0.999, range_class=range_class)


def test_ranges_match_reference_parameters(sinr):
    assert transmission_range(sinr) == pytest.approx(100.0, abs=1e-9)
    assert broadcast_range(sinr) == pytest.approx(84.0896, abs=1e-3)
    assert address_radius(RangeClass.R2, sinr) == pytest.approx(3 * broadcast_range(sinr))


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        SinrParams(alpha=1.5)
    with pytest.raises(ValueError):
        SinrParams(beta=1.0)
    with pytest.raises(ValueError):
        SinrParams(noise=0.0)


def test_packet_must_end_after_start():
    with pytest.raises(ValueError):
        Packet(origin=0, origin_pos=(0.0, 0.0), broadcast_id=1, start=1.0, end=1.0)


def test_single_sender_within_transmission_range(sinr):
    sender = _packet(0, (50.0, 0.0))
    assert sinr_feasible(sender, (0.0, 0.0), [sender], sinr)
    far = _packet(1, (101.0, 0.0))
    assert not sinr_feasible(far, (0.0, 0.0), [far], sinr)


def test_zero_distance_raises(sinr):
    sender = _packet(0, (5.0, 5.0))
    with pytest.raises(DegenerateGeometryError):
        sinr_feasible(sender, (5.0, 5.0), [sender], sinr)


def test_same_broadcast_does_not_interfere(sinr):
    first = _packet(0, (50.0, 0.0), start=0.0, bid=7)
    second = _packet(0, (50.0, 0.0), start=0.5, bid=7)
    assert sinr_feasible(first, (0.0, 0.0), [first, second], sinr)


def test_r2_power_boost():
    boosted = SinrParams(r2_power_boost=True)
    pk = _packet(0, (0.0, 0.0), range_class=RangeClass.R2)
    assert emitted_power(pk, boosted) == pytest.approx(81.0)
    assert emitted_power(pk, SinrParams()) == 1.0
    # 加強功率後 r2 範圍內的接收端可以解碼
    assert sinr_feasible(pk, (250.0, 0.0), [pk], boosted)
    assert not sinr_feasible(pk, (250.0, 0.0), [pk], SinrParams())


def test_matches_brute_force_on_random_instances(sinr):
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(2, 21))
        pts = rng.uniform(0.0, 300.0, size=(n, 2))
        packets = [_packet(i, (float(x), float(y))) for i, (x, y) in enumerate(pts[1:], start=1)]
        receiver = (float(pts[0, 0]), float(pts[0, 1]))
        for target in packets:
            d = math.hypot(target.origin_pos[0] - receiver[0], target.origin_pos[1] - receiver[1])
            terms = [
                1.0 / math.hypot(o.origin_pos[0] - receiver[0], o.origin_pos[1] - receiver[1]) ** 4
                for o in packets if o is not target
            ]
            expected = (1.0 / d ** 4) / (math.fsum(terms) + 1e-9) >= 10.0
            assert sinr_feasible(target, receiver, packets, sinr) == expected


def test_far_interferer_does_not_block(sinr):
    near = _packet(1, (60.0, 0.0), start=0.0)
    far = _packet(2, (1000.0, 0.0), start=0.2)
    assert deliverable_set(0, (0.0, 0.0), near.end, [near, far], sinr) is near


def test_overlapping_neighbors_both_lost(sinr):
    a = _packet(1, (60.0, 0.0), start=0.0)
    b = _packet(2, (-70.0, 0.0), start=0.5)
    assert deliverable_set(0, (0.0, 0.0), a.end, [a, b], sinr) is None
    # 接收端已鎖定較早開始的 a
    assert deliverable_set(0, (0.0, 0.0), b.end, [a, b], sinr) is None


def test_receiver_transmitting_cannot_decode(sinr):
    incoming = _packet(1, (40.0, 0.0), start=0.0)
    own = _packet(0, (0.0, 0.0), start=0.3)
    assert deliverable_set(0, (0.0, 0.0), incoming.end, [incoming, own], sinr) is None


def test_outside_address_radius_not_delivered(sinr):
    pk = _packet(1, (90.0, 0.0))
    assert deliverable_set(0, (0.0, 0.0), pk.end, [pk], sinr) is None
