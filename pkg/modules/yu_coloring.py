"""
YuColor 協定
先等待 duration 個時槽，再以 r₂ 範圍競爭 MIS；勝出的 leader 以 r₂ 廣播
DoNotTransmit 封鎖附近節點、取顏色 0，接著在 r₁ 範圍依 FIFO 佇列核發選色許可。
被封鎖的節點保持安靜，直到收到 StartColoring 或所有封鎖者都送出 StartTransmit。
YuCor 為修正型變體。
"""

from collections import deque
from dataclasses import replace
from enum import Enum
from typing import Deque, Dict, Optional, Set

import numpy as np

from modules.comms import Message, MisLevel, MisOutcome, MisRound, MsgKind, local_broadcast
from modules.deployment import Topology
from modules.protocols import NodeMachine, Protocol, redraw_color
from modules.sinr import RangeClass

# 以 r₂ 送出的控制訊息可能來自非鄰居，其顏色不計入 C_v
R2_KINDS = frozenset({
    MsgKind.PRIORITY, MsgKind.DOMINATE, MsgKind.DO_NOT_TRANSMIT, MsgKind.START_TRANSMIT,
})


class YuPhase(Enum):
    START = "start"
    MIS = "mis"
    LEADER = "leader"
    RESIGNED = "resigned"
    BLOCKED = "blocked"
    C1 = "c1"
    DONE = "done"


class YuMachine(NodeMachine):

    def __init__(self, node, params, protocol):
        super().__init__(node, params, protocol)
        self.phase = YuPhase.START
        self.blockers: Set[int] = set()
        self.leader: Optional[int] = None
        self.last_contact = 0.0
        self.mis: Optional[MisRound] = None
        self._start_timer = None
        # leader 端
        self.queue: Deque[int] = deque()
        self.last_ask = 0.0

    # p_high/短時窗對應快速廣播，p_low/長時窗對應一般本地廣播
    @property
    def p_high(self) -> float:
        return self.p_flb

    @property
    def p_low(self) -> float:
        return self.p_lb

    @property
    def short(self) -> int:
        return self.flb_slots

    @property
    def long(self) -> int:
        return self.window

    def on_receive(self, msg, sender: int) -> None:
        if isinstance(msg, Message) and msg.kind in R2_KINDS and msg.color is not None:
            msg = replace(msg, color=None)
        super().on_receive(msg, sender)

    def on_wake(self) -> None:
        self.phase = YuPhase.START
        self._start_timer = self.node.after(self.long, self._enter_mis)

    def _enter_mis(self) -> None:
        if self.phase in (YuPhase.LEADER, YuPhase.RESIGNED):
            return
        self.phase = YuPhase.MIS
        self.mis = MisRound(
            self.node, MisLevel.L1, self.long, self.p_low,
            range_class=RangeClass.R2, tag="Yu",
            announce_window=self.short, announce_probability=self.p_high,
            announce_range=RangeClass.R2,
            on_outcome=self._mis_outcome, repeat=True,
        ).start()

    def _mis_outcome(self, mis: MisRound, outcome: MisOutcome) -> None:
        if outcome is MisOutcome.WON:
            self._become_leader()
        elif outcome is MisOutcome.LOST:
            # 支配者未必成為 leader；繼續競爭，直到收到 DoNotTransmit 或 StartColoring
            self._enter_mis()

    # ---- leader ----

    def _become_leader(self) -> None:
        self.phase = YuPhase.LEADER
        self.log("MIS 勝出，以 r₂ 送出 DoNotTransmit")
        self.node.broadcast(
            Message(MsgKind.DO_NOT_TRANSMIT), self.p_high, self.short,
            range_class=RangeClass.R2, on_done=self._start_coloring,
        )

    def _start_coloring(self) -> None:
        self.take_color(0, finished=True)
        self.last_ask = self.node.now
        self.log("成為 leader，顏色 0")
        self._leader_loop()

    def _leader_loop(self) -> None:
        if self.phase is not YuPhase.LEADER:
            return
        if self.node.now - self.last_ask >= self.long:
            self._resign()
        elif self.queue:
            requester = self.queue.popleft()
            message = Message(MsgKind.COLOR_GRANT, target=requester)
            local_broadcast(self.node, message, self.params, fast=True, on_done=self._leader_loop)
        else:
            local_broadcast(self.node, Message(MsgKind.START_COLORING), self.params, fast=True,
                            on_done=self._leader_loop)

    def _resign(self) -> None:
        self.phase = YuPhase.RESIGNED
        self.log("長時間沒有 AskColor，卸任並送出 StartTransmit")
        local_broadcast(
            self.node, Message(MsgKind.START_TRANSMIT), self.params, fast=True,
            range_class=RangeClass.R2, on_done=self._after_resign,
        )

    def _after_resign(self) -> None:
        self.beacon()
        self.protocol.leader_resigned(self.node.id)

    # ---- 被封鎖與著色 ----

    def _block(self, blocker: int) -> None:
        if self._start_timer is not None:
            self._start_timer.cancel()
        if self.mis is not None:
            self.mis.cancel()
        self.node.silence()
        self.phase = YuPhase.BLOCKED
        self.blockers.add(blocker)
        self.protocol.blocked[self.node.id] = self

    def _unblock(self) -> None:
        self.protocol.blocked.pop(self.node.id, None)

    def _enter_c1(self, leader: int) -> None:
        self._unblock()
        if self._start_timer is not None:
            self._start_timer.cancel()
        if self.mis is not None:
            self.mis.cancel()
        self.phase = YuPhase.C1
        self.leader = leader
        self.last_contact = self.node.now
        self._ask()

    def _ask(self) -> None:
        if self.phase is not YuPhase.C1:
            return
        message = Message(MsgKind.ASK_COLOR, target=self.leader)
        local_broadcast(self.node, message, self.params, on_done=self._ask_timeout)

    def _ask_timeout(self) -> None:
        if self.phase is not YuPhase.C1:
            return
        if self.node.now - self.last_contact >= self.long:
            self.log(f"leader {self.leader} 沒有回應，回到 MIS 競爭")
            self._enter_mis()
        else:
            self._ask()

    def _pick(self) -> None:
        self.phase = YuPhase.DONE
        self.take_color(self.state.smallest_free(), finished=True)
        self.log(f"選色 {self.state.color}")
        local_broadcast(self.node, Message(MsgKind.COLOR), self.params, fast=True, on_done=self.beacon)

    def quit_with_default(self) -> None:
        """封鎖者全部卸任而仍被封鎖：取顏色 0 並結束"""
        self._unblock()
        self.phase = YuPhase.DONE
        self.take_color(0, finished=True)
        self.log("封鎖者皆已卸任，取顏色 0 結束")
        self.beacon()

    def _on_leader_message(self, msg: Message) -> None:
        """C1 節點收到自己 leader 的訊息"""
        self.last_contact = self.node.now
        if msg.kind is MsgKind.START_TRANSMIT or msg.kind is MsgKind.COLOR:
            # leader 已卸任，不會再核發許可
            self.log(f"leader {self.leader} 已卸任，回到 MIS 競爭")
            self._enter_mis()
        elif msg.kind is MsgKind.COLOR_GRANT and msg.target == self.node.id:
            self._pick()

    def handle(self, msg, sender: int) -> None:
        if not isinstance(msg, Message):
            return
        kind = msg.kind
        if self.phase is YuPhase.C1 and sender == self.leader:
            self._on_leader_message(msg)
            return
        if kind is MsgKind.DO_NOT_TRANSMIT:
            if self.phase in (YuPhase.START, YuPhase.MIS, YuPhase.BLOCKED):
                self._block(sender)
            elif self.phase is YuPhase.C1 and self.protocol.mobile:
                self._block(sender)
            return
        if kind is MsgKind.START_COLORING:
            if self.phase in (YuPhase.START, YuPhase.MIS, YuPhase.BLOCKED):
                self._enter_c1(sender)
            return
        if kind is MsgKind.START_TRANSMIT:
            if self.phase is YuPhase.BLOCKED and sender in self.blockers:
                self.blockers.discard(sender)
                if not self.blockers:
                    self._unblock()
                    self._enter_mis()
            return
        if kind is MsgKind.ASK_COLOR:
            if self.phase is YuPhase.LEADER and msg.target == self.node.id:
                self.last_ask = self.node.now
                if sender not in self.queue:
                    self.queue.append(sender)
            return
        if self.phase is YuPhase.MIS and self.mis is not None:
            self.mis.on_message(msg, sender)

    def on_conflict(self, sender: int) -> None:
        if not self.protocol.correcting:
            return
        if self.phase in (YuPhase.LEADER, YuPhase.RESIGNED):
            color = redraw_color(max(self.params.delta, 1), self.state.taken(), self.node.rng)
            self.log(f"leader 衝突，隨機改為 {color}")
            self.node.note_redraw()
            self.take_color(color, finished=True)
        elif self.phase is YuPhase.DONE:
            self.log("衝突，回到 MIS 競爭")
            self.node.note_redraw()
            self.reopen()
            self._enter_mis()


class YuColoring(Protocol):
    """
    Args:
        correcting: 修正型變體（YuCor）
        mobile: 移動情境；C1 節點也會被 DoNotTransmit 封鎖，且不套用卸任後取色 0 的規則
    """

    machine_class = YuMachine

    def __init__(self, correcting: bool = False, **options):
        super().__init__(**options)
        self.correcting = correcting
        self.blocked: Dict[int, YuMachine] = {}
        self.resigned: Set[int] = set()

    def prepare(self, topology: Topology, params, rng: np.random.Generator) -> None:
        self.blocked = {}
        self.resigned = set()

    def leader_resigned(self, leader: int) -> None:
        """模擬器端規則：直接讀取全域的封鎖與卸任紀錄，不經由訊息傳遞"""
        self.resigned.add(leader)
        if self.mobile:
            return
        for node_id in sorted(self.blocked):
            machine = self.blocked.get(node_id)
            if machine is None or machine.phase is not YuPhase.BLOCKED:
                continue
            if machine.blockers and machine.blockers <= self.resigned:
                machine.quit_with_default()
