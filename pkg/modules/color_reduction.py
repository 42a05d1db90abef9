"""
ColorReduction 協定
第一層 MIS 選出 leader；leader 依請求者的初始顏色排出活動區間；
非 leader 在自己的區間內以快速廣播跑第二層 MIS，勝出者選 F_v 中最小的顏色。
CRRandColor 以隨機 (c·Δ) 初始著色取代預先計算的合法著色；CRRCor 為修正型變體。
"""

import math
from enum import Enum
from typing import List, Optional

import numpy as np

from modules.comms import Message, MisLevel, MisOutcome, MisRound, MsgKind, local_broadcast, mis_round
from modules.deployment import Topology
from modules.protocols import ActiveInterval, NodeMachine, Protocol, precompute_valid_coloring, redraw_color

INITIAL_VALID = "valid"
INITIAL_RANDOM = "random"

# 第二層 MIS 全層共用一個標籤，同時活動的鄰居不論初始顏色都互相競爭
L2_TAG = "L2"


class CRPhase(Enum):
    IDLE = "idle"
    MIS = "mis"
    LEADER = "leader"
    REQUEST = "request"
    WAIT = "wait"
    COMPETE = "compete"
    DONE = "done"


class CRMachine(NodeMachine):

    def __init__(self, node, params, protocol):
        super().__init__(node, params, protocol)
        self.phase = CRPhase.IDLE
        self.ic: Optional[int] = None
        self.leader: Optional[int] = None
        self.leader_confirmed = False
        self.last_contact = 0.0
        self.mis: Optional[MisRound] = None
        self.l2: Optional[MisRound] = None
        self.interval: Optional[ActiveInterval] = None
        self.schedule: Optional[dict] = None
        self._timer = None
        # leader 端
        self.requested: set = set()
        self.table: List[int] = []
        self.frozen = False
        self.version = 0
        self.epoch: Optional[float] = None

    def on_wake(self) -> None:
        self.ic = self.protocol.initial_color(self.node, self.params)
        self._compete_for_leader()

    def _compete_for_leader(self) -> None:
        self.phase = CRPhase.MIS
        self.leader = None
        self.leader_confirmed = False
        self.schedule = None
        self.mis = mis_round(self.node, MisLevel.L1, self.params, on_outcome=self._l1_outcome, tag="L1", repeat=True)

    def _l1_outcome(self, mis: MisRound, outcome: MisOutcome) -> None:
        if outcome is MisOutcome.WON:
            self._become_leader()
        elif outcome is MisOutcome.LOST:
            self._follow(mis.dominator)

    # ---- leader ----

    def _pick_free(self, random: bool = False) -> int:
        free = sorted(self.state.free_colors())
        if not free:
            self.log("F_v 為空，改用不在 C_v 中的最小顏色")
            return self.state.smallest_free()
        if random:
            return redraw_color(self.state.palette_size, self.state.taken(), self.node.rng)
        return free[0]

    def _become_leader(self) -> None:
        self.phase = CRPhase.LEADER
        self.take_color(self._pick_free(), finished=True)
        self.log(f"成為 leader，顏色 {self.state.color}")
        self._beacon_grant()
        self.node.after(self.window, self._freeze)

    def _grant_message(self) -> Message:
        data = None
        if self.frozen and self.table:
            length = self.flb_slots
            data = {
                "epoch_in": self.epoch - (self.node.now + self.node.transmission_time),
                "table": tuple(self.table),
                "L": length,
                "S": len(self.table) * length,
                "version": self.version,
            }
        return Message(MsgKind.GRANT, data=data)

    def _beacon_grant(self) -> None:
        self.node.broadcast(self._grant_message, self.p_lb, None)

    def _announce_schedule(self) -> None:
        self.epoch = self.node.now + self.flb_slots
        self.version += 1
        local_broadcast(self.node, self._grant_message, self.params, fast=True, on_done=self._beacon_grant)

    def _freeze(self) -> None:
        self.frozen = True
        self.table = sorted(self.requested)
        self.log(f"排程凍結：{len(self.table)} 個初始顏色")
        if self.table:
            self._announce_schedule()

    def _on_request(self, ic: int) -> None:
        if not self.frozen:
            self.requested.add(ic)
        elif ic not in self.table:
            # 晚到的初始顏色接在最後，並以新版本重新起算整份排程
            self.table.append(ic)
            self.log(f"加入晚到的初始顏色 {ic}，排程版本 {self.version + 1}")
            self._announce_schedule()

    # ---- 非 leader ----

    def _follow(self, leader: Optional[int]) -> None:
        self.phase = CRPhase.REQUEST
        self.leader = leader
        self.leader_confirmed = False
        self.last_contact = self.node.now
        self.log(f"跟隨 leader {self.leader}")
        self._request()

    def _confirm_leader(self, sender: int) -> None:
        """REQUEST 中第一個解碼到 Grant 的 leader 成為跟隨對象"""
        self.leader_confirmed = True
        if sender == self.leader:
            return
        self.log(f"改跟隨 leader {sender}")
        self.leader = sender
        self.last_contact = self.node.now
        self._request()

    def _request(self) -> None:
        if self.phase is not CRPhase.REQUEST:
            return
        message = Message(MsgKind.REQUEST, target=self.leader, data=self.ic)
        local_broadcast(self.node, message, self.params, on_done=self._request_timeout)

    def _request_timeout(self) -> None:
        if self.phase is not CRPhase.REQUEST:
            return
        if self.node.now - self.last_contact >= self.window:
            self.log(f"leader {self.leader} 沒有回應，重新競爭 leader")
            self._compete_for_leader()
        else:
            self._request()

    def _on_grant(self, data: dict) -> None:
        if self.ic not in data["table"]:
            return
        if self.schedule is not None and data["version"] <= self.schedule["version"]:
            return
        self.schedule = {
            "epoch": self.node.now + data["epoch_in"],
            "index": data["table"].index(self.ic),
            "L": data["L"],
            "S": data["S"],
            "version": data["version"],
        }
        if self.phase is CRPhase.REQUEST:
            self.node.silence()
            self._wait_next(self.node.now)
        elif self.phase is CRPhase.WAIT:
            self._wait_next(self.node.now)

    def _wait_next(self, not_before: float) -> None:
        s = self.schedule
        first = s["epoch"] + s["index"] * s["L"]
        periods = max(0, math.ceil((not_before - first) / s["S"] - 1e-9))
        self.interval = ActiveInterval(first + periods * s["S"], s["L"], s["S"])
        self.phase = CRPhase.WAIT
        if self._timer is not None:
            self._timer.cancel()
        self._timer = self.node.after_time(self.interval.start, self._begin_interval)

    def _begin_interval(self) -> None:
        if self.phase is not CRPhase.WAIT:
            return
        self.phase = CRPhase.COMPETE
        self.l2 = mis_round(self.node, MisLevel.L2, self.params, on_outcome=self._l2_outcome, tag=L2_TAG)

    def _l2_outcome(self, mis: MisRound, outcome: MisOutcome) -> None:
        if outcome is MisOutcome.WON:
            self.phase = CRPhase.DONE
            self.take_color(self._pick_free(), finished=True)
            self.log(f"第二層 MIS 勝出，顏色 {self.state.color}")
            local_broadcast(self.node, Message(MsgKind.COLOR), self.params, fast=True, on_done=self.beacon)
        else:
            self._wait_next(self.node.now)

    # ---- 訊息 ----

    def handle(self, msg, sender: int) -> None:
        if not isinstance(msg, Message):
            return
        if msg.kind is MsgKind.GRANT:
            if self.phase is CRPhase.MIS:
                self.mis.lose(sender)
            if self.phase is CRPhase.REQUEST and not self.leader_confirmed:
                self._confirm_leader(sender)
            if sender == self.leader:
                self.last_contact = self.node.now
                if msg.data is not None:
                    self._on_grant(msg.data)
            return
        if msg.kind is MsgKind.REQUEST:
            if self.phase is CRPhase.LEADER and msg.target == self.node.id:
                self._on_request(msg.data)
            return
        if self.mis is not None and self.mis.on_message(msg, sender):
            return
        if self.l2 is not None:
            self.l2.on_message(msg, sender)

    def on_conflict(self, sender: int) -> None:
        if not self.protocol.correcting:
            return
        if self.phase is CRPhase.LEADER:
            color = self._pick_free(random=True)
            self.log(f"leader 衝突，隨機改為 {color}")
            self.node.note_redraw()
            self.take_color(color, finished=True)
        elif self.phase is CRPhase.DONE and self.interval is not None:
            self.log("衝突，改在下一個週期的活動區間重新競爭")
            self.node.note_redraw()
            self.reopen()
            # 等待期間仍持續廣播目前顏色
            self.beacon()
            self._wait_next(self.interval.start + self.schedule["S"])


class ColorReduction(Protocol):
    """
    Args:
        initial: "valid"（預先計算的合法 c·Δ 著色）或 "random"（隨機 c·Δ 著色）
        palette_factor: 初始調色盤倍數 c
        correcting: 修正型變體（CRRCor）
    """

    machine_class = CRMachine

    def __init__(self, initial: str = INITIAL_VALID, palette_factor: float = 2.0,
                 correcting: bool = False, **options):
        super().__init__(**options)
        if initial not in (INITIAL_VALID, INITIAL_RANDOM):
            raise ValueError(f"未知的初始著色方式: {initial}")
        if palette_factor <= 0:
            raise ValueError(f"palette_factor 必須為正: {palette_factor}")
        self.initial = initial
        self.palette_factor = palette_factor
        self.correcting = correcting
        self.initial_colors: List[int] = []

    def initial_palette(self, delta: int) -> int:
        size = max(1, int(round(self.palette_factor * max(delta, 1))))
        if self.initial == INITIAL_VALID:
            size = max(size, delta + 1)
        return size

    def prepare(self, topology: Topology, params, rng: np.random.Generator) -> None:
        if self.initial == INITIAL_VALID:
            self.initial_colors = precompute_valid_coloring(topology, self.initial_palette(topology.delta), rng)

    def initial_color(self, node, params) -> int:
        if self.initial == INITIAL_VALID and node.id < len(self.initial_colors):
            return self.initial_colors[node.id]
        return int(node.rng.integers(self.initial_palette(params.delta)))
