from dataclasses import replace

import numpy as np
import pytest

from modules.color_reduction import L2_TAG, ColorReduction, CRPhase
from modules.comms import CommParams, Message, MisLevel, MsgKind
from modules.deployment import DeploymentSpec, Strategy, build_topology, generate
from modules.kernel import Kernel
from modules.metrics import FINISH_VALID, audit_coloring, is_independent
from modules.mw_coloring import COMPETE_LEVEL, MWColoring, MWPhase
from modules.protocols import (
    ActiveInterval, ColorBlock, build_protocol, correcting_wrap,
    precompute_valid_coloring, protocol_names, redraw_color,
)
from modules.rand_coloring import RandColoring
from modules.sinr import RangeClass
from modules.yu_coloring import YuPhase

COLORING_PROTOCOLS = [name for name in protocol_names() if name != "LBProbe"]


class _Job:

    def __init__(self, message, probability, slots, range_class, on_done):
        self.message = message
        self.probability = probability
        self.slots = slots
        self.range_class = range_class
        self.on_done = on_done
        self.cancelled = False

    @property
    def payload(self):
        return self.message() if callable(self.message) else self.message

    def cancel(self):
        self.cancelled = True

    def finish(self):
        if not self.cancelled and self.on_done is not None:
            self.on_done()


class _Timer:

    def __init__(self, at, callback):
        self.at = at
        self.callback = callback
        self.cancelled = False

    def cancel(self):
        self.cancelled = True

    def fire(self):
        if not self.cancelled:
            self.callback()


class _StubNode:
    """只記錄傳送與計時器、不會自己推進時間的節點，讓測試逐步驅動狀態機"""

    transmission_time = 0.999

    def __init__(self, node_id=0, seed=0):
        self.id = node_id
        self.now = 0.0
        self.rng = np.random.default_rng(seed)
        self.color = None
        self.finished = False
        self.redraws = 0
        self.jobs = []
        self.timers = []

    def broadcast(self, message, probability, slots=None, range_class=RangeClass.R1, on_done=None):
        if self.jobs:
            self.jobs[-1].cancel()
        job = _Job(message, probability, slots, range_class, on_done)
        self.jobs.append(job)
        return job

    def silence(self):
        if self.jobs:
            self.jobs[-1].cancel()

    def after(self, slots, callback):
        timer = _Timer(self.now + slots, callback)
        self.timers.append(timer)
        return timer

    def after_time(self, at, callback):
        timer = _Timer(max(at, self.now), callback)
        self.timers.append(timer)
        return timer

    def current_slot(self):
        return int(np.ceil(self.now))

    def slot_time(self, slot):
        return float(slot)

    def set_color(self, color):
        self.color = color

    def set_finished(self, finished=True):
        self.finished = finished

    def note_redraw(self):
        self.redraws += 1

    @property
    def last(self):
        return self.jobs[-1]

    def kinds(self):
        return [job.payload.kind for job in self.jobs]


def _machine(name, node_id=0, delta=2, protocol=None):
    node = _StubNode(node_id)
    protocol = protocol or build_protocol(name)
    machine = protocol.machine(node, CommParams(tx_const=0.15, duration=300, delta=delta))
    return node, machine


def _lose_level_one(machine, dominator):
    machine.on_receive(Message(MsgKind.DOMINATE, level=MisLevel.L1, tag="L1", priority=2.0), dominator)


def test_redraw_avoids_forbidden_colors():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert redraw_color(4, {0, 1, 3}, rng) == 2
    # 全部被占用時仍回傳調色盤內的顏色
    assert 0 <= redraw_color(3, {0, 1, 2}, rng) < 3
    with pytest.raises(ValueError):
        redraw_color(0, (), rng)


def test_precomputed_coloring_is_valid(sinr):
    positions = generate(DeploymentSpec(Strategy.CLUSTER, n=80, area=(300.0, 300.0), seed=6))
    topology = build_topology(positions, sinr)
    colors = precompute_valid_coloring(topology, topology.delta + 1, np.random.default_rng(1))
    assert not audit_coloring(topology, colors)
    assert max(colors) <= topology.delta
    with pytest.raises(ValueError):
        precompute_valid_coloring(topology, topology.delta, np.random.default_rng(1))


def test_active_interval_and_color_block():
    interval = ActiveInterval(start=12.5, length_slots=4, schedule_length_slots=20)
    assert interval.next_period().start == pytest.approx(32.5)
    with pytest.raises(ValueError):
        ActiveInterval(start=0.0, length_slots=5, schedule_length_slots=4)
    block = ColorBlock(9)
    assert list(block.colors()) == list(range(9, 17))
    assert block.last == 16
    with pytest.raises(ValueError):
        ColorBlock(0)


def test_build_protocol_by_name():
    protocol = build_protocol("rand4d-resp-color")
    assert isinstance(protocol, RandColoring)
    assert protocol.name == "Rand4DRespColor"
    assert protocol.respect and protocol.finish_mode == FINISH_VALID
    assert build_protocol("Rand4DFinalColor").finish_mode != FINISH_VALID
    with pytest.raises(ValueError):
        build_protocol("GreedyColor")
    with pytest.raises(ValueError):
        build_protocol("Rand4DColor", redraw="sometimes")


def test_correcting_wrap():
    protocol = correcting_wrap("CRRandColor", 575)
    assert protocol.name == "CRRCor"
    assert protocol.correcting
    assert protocol.duration_prime == 575
    assert correcting_wrap("yucolor", 10).name == "YuCor"
    with pytest.raises(ValueError):
        correcting_wrap("Rand4DColor", 10)
    with pytest.raises(ValueError):
        correcting_wrap("MWColor", 0)


def test_effective_params_caps_duration_prime():
    protocol = build_protocol("MWCor", factor=0.2, duration_prime=1000)
    params = protocol.effective_params(CommParams(tx_const=0.15, duration=300, delta=5))
    assert params.factor == 0.2
    assert params.duration_prime == 300
    assert params.window == 300


def test_phase_length():
    assert RandColoring.phase_length(CommParams(tx_const=0.15, duration=300, factor=0.001)) == 1
    assert RandColoring.phase_length(CommParams(tx_const=0.15, duration=300, factor=0.5)) == 150


def test_initial_palette_sizes():
    assert ColorReduction(initial="random", palette_factor=2.0).initial_palette(10) == 20
    assert ColorReduction(initial="random", palette_factor=1.0).initial_palette(10) == 10
    # 預先計算的合法著色至少要 Δ+1 色
    assert ColorReduction(initial="valid", palette_factor=1.0).initial_palette(10) == 11


@pytest.mark.parametrize("name", COLORING_PROTOCOLS)
def test_protocol_terminates_on_line(name, line_topology, comm_params, kernel_config, sinr):
    protocol = build_protocol(name)
    kernel = Kernel(line_topology, protocol, kernel_config, comm_params, sinr)
    metrics = kernel.run()

    assert metrics.terminated
    assert all(c >= 0 for c in metrics.final_colors)
    assert metrics.final_conflicts == len(audit_coloring(line_topology, metrics.final_colors))
    if protocol.finish_mode == FINISH_VALID:
        assert metrics.final_conflicts == 0
    if name.startswith("Rand"):
        assert metrics.max_color < protocol.palette_bound(line_topology.delta)
    if name.startswith(("Rand1D", "CR", "ColorReduction", "Yu")):
        assert metrics.max_color <= line_topology.delta
    if name.startswith("MW"):
        blocks = max(node.machine.blocks_issued for node in kernel.nodes)
        assert metrics.max_color < MWColoring.palette_bound(blocks)


def test_phase_end_redraw_terminates(line_topology, comm_params, kernel_config, sinr):
    protocol = build_protocol("Rand4DColor", redraw="phase_end", factor=0.1)
    metrics = Kernel(line_topology, protocol, kernel_config, comm_params, sinr).run()
    assert metrics.terminated
    assert metrics.final_conflicts == 0


def test_color_reduction_leaders_are_independent(line_topology, comm_params, kernel_config, sinr):
    kernel = Kernel(line_topology, build_protocol("ColorReduction"), kernel_config, comm_params, sinr)
    assert kernel.run().terminated
    leaders = [node.id for node in kernel.nodes if node.machine.phase is CRPhase.LEADER]
    assert leaders
    assert is_independent(line_topology, leaders)


def test_yu_leaders_take_color_zero(line_topology, comm_params, kernel_config, sinr):
    kernel = Kernel(line_topology, build_protocol("YuColor"), kernel_config, comm_params, sinr)
    assert kernel.run().terminated
    leaders = [node for node in kernel.nodes if node.machine.phase in (YuPhase.LEADER, YuPhase.RESIGNED)]
    assert leaders
    assert all(node.color == 0 for node in leaders)


def test_final_variant_isolated_node_finalizes_after_duration(sinr, kernel_config):
    topology = build_topology(np.array([[0.0, 0.0]]), sinr)
    params = CommParams(tx_const=0.15, duration=250, delta=0)
    metrics = Kernel(topology, build_protocol("Rand4DFinalColor"), kernel_config, params, sinr).run()
    assert metrics.terminated
    assert metrics.end_time - metrics.first_wake == pytest.approx(250.0)


@pytest.mark.parametrize("base", ["CRRandColor", "MWColor", "YuColor"])
def test_correcting_variant_terminates_on_random_deployment(base, sinr, kernel_config):
    topology = build_topology(generate(DeploymentSpec(Strategy.RANDOM, n=25, area=(250.0, 250.0), seed=8)), sinr)
    params = CommParams(tx_const=0.15, duration=300, delta=topology.delta)
    metrics = Kernel(topology, correcting_wrap(base, 75), kernel_config, params, sinr).run()
    assert metrics.terminated
    assert all(c >= 0 for c in metrics.final_colors)


def test_rand_valid_coloring_is_absorbing(line_topology, comm_params, kernel_config, sinr):
    stopped = Kernel(line_topology, build_protocol("Rand4DColor"), kernel_config, comm_params, sinr).run()
    assert stopped.terminated and stopped.final_conflicts == 0

    config = replace(kernel_config, stop_on_termination=False, max_slots=stopped.runtime_slots + 2000)
    kept = Kernel(line_topology, build_protocol("Rand4DColor"), config, comm_params, sinr).run()
    # 全部合法之後沒有人再換色
    assert kept.final_colors == stopped.final_colors
    assert kept.redraw_total == stopped.redraw_total
    assert kept.final_conflicts == 0


def test_yu_leader_and_single_neighbor_use_colors_zero_and_one(sinr, kernel_config):
    topology = build_topology(np.array([[0.0, 0.0], [50.0, 0.0]]), sinr)
    params = CommParams(tx_const=0.15, duration=300, delta=topology.delta)
    metrics = Kernel(topology, build_protocol("YuColor"), kernel_config, params, sinr).run()
    assert metrics.terminated
    assert sorted(metrics.final_colors) == [0, 1]


def test_resp_first_pick_and_redraw_avoid_heard_colors():
    node, machine = _machine("Rand4DRespColor")
    assert machine.state.palette_size == 8
    machine.on_wake()
    assert node.color is None
    for sender, color in enumerate(range(6), start=1):
        machine.on_receive(Message(MsgKind.COLOR, color=color), sender)
    node.timers[-1].fire()
    first = node.color
    assert first in (6, 7)

    machine.on_receive(Message(MsgKind.COLOR, color=first), 9)
    assert node.color == ({6, 7} - {first}).pop()
    assert node.redraws == 1


# ---- ColorReduction ----

def test_cr_follower_switches_to_first_decoded_leader():
    node, machine = _machine("CRRandColor")
    machine.on_wake()
    assert machine.phase is CRPhase.MIS
    _lose_level_one(machine, 5)
    assert machine.phase is CRPhase.REQUEST
    assert machine.leader == 5 and not machine.leader_confirmed

    # 支配者 5 沒有成為 leader；7 的 Grant 先到
    machine.on_receive(Message(MsgKind.GRANT, color=0), 7)
    assert machine.leader == 7 and machine.leader_confirmed
    request = node.last.payload
    assert request.kind is MsgKind.REQUEST
    assert request.target == 7 and request.data == machine.ic


def test_cr_follower_without_leader_contact_competes_again():
    node, machine = _machine("CRRandColor")
    machine.on_wake()
    _lose_level_one(machine, 5)

    node.now = 100.0
    machine.on_receive(Message(MsgKind.GRANT, color=0), 5)
    node.now = 350.0
    node.last.finish()
    assert machine.phase is CRPhase.REQUEST
    assert node.last.payload.kind is MsgKind.REQUEST

    node.now = 700.0
    node.last.finish()
    assert machine.phase is CRPhase.MIS
    assert machine.leader is None
    assert node.last.payload.kind is MsgKind.PRIORITY


def _cr_follower_with_schedule(epoch_in=10.0):
    node, machine = _machine("CRRandColor")
    machine.on_wake()
    _lose_level_one(machine, 5)
    length = machine.flb_slots
    data = {"epoch_in": epoch_in, "table": (machine.ic, machine.ic + 100), "L": length,
            "S": 2 * length, "version": 1}
    machine.on_receive(Message(MsgKind.GRANT, color=0, data=data), 5)
    return node, machine, length


def test_cr_second_level_mis_is_shared_across_initial_colors():
    node, machine, length = _cr_follower_with_schedule()
    assert machine.phase is CRPhase.WAIT
    assert machine.interval.start == pytest.approx(10.0)

    node.now = 10.0
    node.timers[-1].fire()
    assert machine.phase is CRPhase.COMPETE
    assert machine.l2.tag == L2_TAG
    priority = node.last.payload
    assert priority.kind is MsgKind.PRIORITY and priority.level == MisLevel.L2 and priority.tag == L2_TAG

    # 初始顏色不同的鄰居同時活動，仍然讓本節點落敗
    node.now = 12.0
    machine.on_receive(Message(MsgKind.DOMINATE, level=MisLevel.L2, tag=L2_TAG, priority=0.0), 8)
    assert machine.phase is CRPhase.WAIT
    assert machine.interval.start == pytest.approx(10.0 + 2 * length)


def test_cr_leader_reissues_schedule_for_late_request():
    node, leader = _machine("CRRandColor")
    leader.on_wake()
    node.last.finish()
    node.last.finish()
    assert leader.phase is CRPhase.LEADER

    leader.on_receive(Message(MsgKind.REQUEST, target=0, data=3), 1)
    leader.on_receive(Message(MsgKind.REQUEST, target=0, data=1), 2)
    node.timers[-1].fire()
    first = node.last.payload.data
    assert first["table"] == (1, 3)
    assert first["version"] == 1
    assert first["S"] == 2 * leader.flb_slots

    node.now = 40.0
    leader.on_receive(Message(MsgKind.REQUEST, target=0, data=2), 4)
    second = node.last.payload.data
    assert second["table"] == (1, 3, 2)
    assert second["version"] == 2
    assert second["S"] == 3 * leader.flb_slots
    assert node.last.payload.data["epoch_in"] == pytest.approx(leader.flb_slots - node.transmission_time)


def test_cr_member_follows_newest_schedule_version():
    node, machine, length = _cr_follower_with_schedule()
    ic = machine.ic
    newer = {"epoch_in": 50.0, "table": (ic + 100, ic + 200, ic), "L": length, "S": 3 * length, "version": 2}
    machine.on_receive(Message(MsgKind.GRANT, color=0, data=newer), 5)
    assert machine.schedule["version"] == 2
    assert machine.interval.start == pytest.approx(50.0 + 2 * length)
    assert machine.interval.schedule_length_slots == 3 * length

    older = {"epoch_in": 10.0, "table": (ic, ic + 100), "L": length, "S": 2 * length, "version": 1}
    machine.on_receive(Message(MsgKind.GRANT, color=0, data=older), 5)
    assert machine.schedule["version"] == 2
    assert machine.interval.start == pytest.approx(50.0 + 2 * length)


# ---- MWColor ----

def test_mw_follower_takes_block_from_first_decoded_leader():
    node, machine = _machine("MWColor")
    machine.on_wake()
    _lose_level_one(machine, 5)
    assert machine.phase is MWPhase.REQUEST and machine.leader == 5

    machine.on_receive(Message(MsgKind.BLOCK_GRANT, color=0, target=3, data=1), 7)
    assert machine.leader == 7
    assert node.last.payload.kind is MsgKind.BLOCK_REQUEST and node.last.payload.target == 7

    machine.on_receive(Message(MsgKind.BLOCK_GRANT, color=0, target=0, data=9), 7)
    assert machine.phase is MWPhase.COMPETE
    assert machine.candidate == 9
    contest = node.last.payload
    assert contest.kind is MsgKind.PRIORITY and contest.level == COMPETE_LEVEL and contest.tag == 9


def test_mw_follower_without_leader_contact_competes_again():
    node, machine = _machine("MWColor")
    machine.on_wake()
    _lose_level_one(machine, 5)
    node.now = float(machine.window)
    node.last.finish()
    assert machine.phase is MWPhase.MIS and machine.leader is None


def test_mw_color_announcement_uses_fast_broadcast():
    node, machine = _machine("MWColor")
    machine.on_wake()
    _lose_level_one(machine, 5)
    machine.on_receive(Message(MsgKind.BLOCK_GRANT, color=0, target=0, data=1), 5)
    compete = node.last
    assert compete.slots == machine.window
    compete.finish()
    announce = node.last
    assert announce.payload.kind is MsgKind.DOMINATE
    assert announce.slots == machine.flb_slots
    assert announce.probability == pytest.approx(machine.p_flb)
    announce.finish()
    assert machine.phase is MWPhase.DONE and node.color == 1


def test_mw_palette_bound():
    assert MWColoring.palette_bound(0) == 1
    assert MWColoring.palette_bound(3) == 25


# ---- YuColor ----

@pytest.mark.parametrize("kind", [MsgKind.START_TRANSMIT, MsgKind.COLOR])
def test_yu_colorer_returns_to_mis_when_leader_resigns(kind):
    node, machine = _machine("YuColor")
    machine.on_wake()
    machine.on_receive(Message(MsgKind.START_COLORING, color=0), 4)
    assert machine.phase is YuPhase.C1 and machine.leader == 4
    assert node.last.payload.kind is MsgKind.ASK_COLOR and node.last.payload.target == 4

    machine.on_receive(Message(kind, color=0), 4)
    assert machine.phase is YuPhase.MIS
    assert node.last.payload.kind is MsgKind.PRIORITY


def test_yu_colorer_without_leader_contact_returns_to_mis():
    node, machine = _machine("YuColor")
    machine.on_wake()
    machine.on_receive(Message(MsgKind.START_COLORING, color=0), 4)
    node.now = float(machine.long)
    node.last.finish()
    assert machine.phase is YuPhase.MIS


def test_yu_announce_loser_keeps_competing_without_blocking_anyone():
    protocol = build_protocol("YuColor")
    node, machine = _machine("YuColor", protocol=protocol)
    machine.on_wake()
    node.timers[-1].fire()
    node.last.finish()
    announce = node.last
    assert announce.payload.kind is MsgKind.DOMINATE and announce.range_class is RangeClass.R2

    machine.on_receive(Message(MsgKind.DOMINATE, color=3, level=MisLevel.L1, tag="Yu", priority=2.0), 6)
    assert machine.phase is YuPhase.MIS
    assert node.last.payload.kind is MsgKind.PRIORITY
    assert MsgKind.DO_NOT_TRANSMIT not in node.kinds()
    assert not protocol.resigned and not protocol.blocked
    # 以 r₂ 送來的訊息不計入 C_v
    assert 6 not in machine.state.neighbor_colors


def test_yu_mis_winner_blocks_before_taking_color_zero():
    node, machine = _machine("YuColor")
    machine.on_wake()
    node.timers[-1].fire()
    node.last.finish()
    node.last.finish()
    blocking = node.last
    assert blocking.payload.kind is MsgKind.DO_NOT_TRANSMIT and blocking.range_class is RangeClass.R2
    assert node.color is None
    blocking.finish()
    assert node.color == 0 and node.finished
    assert node.kinds() == [MsgKind.PRIORITY, MsgKind.DOMINATE, MsgKind.DO_NOT_TRANSMIT, MsgKind.START_COLORING]


def test_yu_blocked_node_quits_only_after_all_blockers_resign():
    protocol = build_protocol("YuColor")
    node, machine = _machine("YuColor", protocol=protocol)
    machine.on_wake()
    machine.on_receive(Message(MsgKind.DO_NOT_TRANSMIT), 1)
    machine.on_receive(Message(MsgKind.DO_NOT_TRANSMIT), 2)
    assert machine.phase is YuPhase.BLOCKED and machine.blockers == {1, 2}

    protocol.leader_resigned(1)
    assert machine.phase is YuPhase.BLOCKED
    protocol.leader_resigned(2)
    assert machine.phase is YuPhase.DONE
    assert node.color == 0


@pytest.mark.slow
@pytest.mark.parametrize("palette_size, forbidden, critical", [
    # χ² 在 0.01 顯著水準下的臨界值（自由度 39 與 29）
    (40, (), 62.43),
    (40, tuple(range(10)), 49.59),
])
def test_redraw_is_uniform_over_allowed_colors(palette_size, forbidden, critical):
    rng = np.random.default_rng(2024)
    draws = [redraw_color(palette_size, forbidden, rng) for _ in range(20_000)]
    allowed = [c for c in range(palette_size) if c not in forbidden]
    counts = np.bincount(draws, minlength=palette_size)
    assert counts[list(forbidden)].sum() == 0
    observed = counts[allowed]
    expected = len(draws) / len(allowed)
    assert ((observed - expected) ** 2 / expected).sum() < critical
