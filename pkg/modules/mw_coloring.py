"""
MWColor 協定
第一層 MIS 選出 leader（顏色 0）；非 leader 向 leader 請求 8 色的色塊，
再依序對色塊中每個顏色跑一次慢速 MIS，勝出即取得該色。
leader 以快速廣播逐一核發色塊。MWCor 為修正型變體。
"""

import math
from collections import deque
from enum import Enum
from typing import Deque, Dict, Optional, Tuple

from modules.comms import Message, MisLevel, MisOutcome, MisRound, MsgKind, local_broadcast, mis_round
from modules.protocols import COLOR_BLOCK_SIZE, ColorBlock, NodeMachine, Protocol, redraw_color

# 色彩競爭的 MIS 層級，與選 leader 的 L1 分開
COMPETE_LEVEL = 3


class MWPhase(Enum):
    IDLE = "idle"
    MIS = "mis"
    LEADER = "leader"
    REQUEST = "request"
    COMPETE = "compete"
    DONE = "done"


class MWMachine(NodeMachine):

    def __init__(self, node, params, protocol):
        super().__init__(node, params, protocol)
        self.phase = MWPhase.IDLE
        self.leader: Optional[int] = None
        self.leader_confirmed = False
        self.last_contact = 0.0
        self.mis: Optional[MisRound] = None
        self.contest: Optional[MisRound] = None
        self.block: Optional[ColorBlock] = None
        self.candidate: Optional[int] = None
        self.exhausted: Optional[int] = None
        # leader 端
        self.queue: Deque[Tuple[int, Optional[int]]] = deque()
        self.grants: Dict[int, int] = {}
        self.issued = 0
        self._granting = False

    @property
    def blocks_issued(self) -> int:
        """leader 目前用到的色塊數"""
        return math.ceil(self.issued / COLOR_BLOCK_SIZE)

    def on_wake(self) -> None:
        self._compete_for_leader()

    def _compete_for_leader(self) -> None:
        self.phase = MWPhase.MIS
        self.leader = None
        self.leader_confirmed = False
        self.mis = mis_round(self.node, MisLevel.L1, self.params, on_outcome=self._l1_outcome, tag="L1", repeat=True)

    def _l1_outcome(self, mis: MisRound, outcome: MisOutcome) -> None:
        if outcome is MisOutcome.WON:
            self.phase = MWPhase.LEADER
            self.take_color(0, finished=True)
            self.log("成為 leader，顏色 0")
            self._serve()
        elif outcome is MisOutcome.LOST:
            self._follow(mis.dominator)

    # ---- leader ----

    def _allocate(self, requester: int, exhausted: Optional[int]) -> int:
        current = self.grants.get(requester)
        if current is not None and current != exhausted:
            # 先前核發的色塊沒有送達，重送同一塊
            return current
        if exhausted is not None and 1 + COLOR_BLOCK_SIZE * (self.issued // COLOR_BLOCK_SIZE) <= exhausted:
            self.issued = ((exhausted - 1) // COLOR_BLOCK_SIZE + 1) * COLOR_BLOCK_SIZE
        base = 1 + COLOR_BLOCK_SIZE * (self.issued // COLOR_BLOCK_SIZE)
        self.issued += 1
        self.grants[requester] = base
        return base

    def _serve(self) -> None:
        """依 FIFO 順序一次核發一個色塊；佇列空了就改回慢速信標"""
        if self.phase is not MWPhase.LEADER:
            return
        if not self.queue:
            self._granting = False
            self.beacon(level=MisLevel.L1)
            return
        self._granting = True
        requester, exhausted = self.queue.popleft()
        base = self._allocate(requester, exhausted)
        self.log(f"核發色塊 {base} 給 {requester}")
        message = Message(MsgKind.BLOCK_GRANT, target=requester, data=base)
        local_broadcast(self.node, message, self.params, fast=True, on_done=self._serve)

    def _on_request(self, requester: int, exhausted: Optional[int]) -> None:
        if any(r == requester for r, _ in self.queue):
            return
        self.queue.append((requester, exhausted))
        if not self._granting:
            self._serve()

    # ---- 非 leader ----

    def _follow(self, leader: Optional[int]) -> None:
        self.phase = MWPhase.REQUEST
        self.leader = leader
        self.leader_confirmed = False
        self.last_contact = self.node.now
        self._request()

    def _on_leader_signal(self, msg: Message, sender: int) -> None:
        if self.phase is MWPhase.MIS:
            self.mis.lose(sender)
        if self.phase is MWPhase.REQUEST and not self.leader_confirmed:
            # 跟隨第一個解碼到的 leader
            self.leader_confirmed = True
            if sender != self.leader:
                self.log(f"改跟隨 leader {sender}")
                self.leader = sender
                self.last_contact = self.node.now
                self._request()
        if sender != self.leader:
            return
        self.last_contact = self.node.now
        if msg.kind is MsgKind.BLOCK_GRANT and msg.target == self.node.id:
            self._on_block(msg.data)

    def _request(self) -> None:
        if self.phase is not MWPhase.REQUEST:
            return
        message = Message(MsgKind.BLOCK_REQUEST, target=self.leader, data=self.exhausted)
        local_broadcast(self.node, message, self.params, on_done=self._request_timeout)

    def _request_timeout(self) -> None:
        if self.phase is not MWPhase.REQUEST:
            return
        if self.node.now - self.last_contact >= self.window:
            self.log(f"leader {self.leader} 沒有回應，重新競爭 leader")
            self._compete_for_leader()
        else:
            self._request()

    def _on_block(self, base: int) -> None:
        if self.phase is not MWPhase.REQUEST or base == self.exhausted:
            return
        self.block = ColorBlock(base)
        self.log(f"取得色塊 {base}..{self.block.last}")
        self._compete(base)

    def _compete(self, color: int) -> None:
        taken = self.state.taken()
        while color <= self.block.last and color in taken:
            color += 1
        if color > self.block.last:
            self.exhausted = self.block.base
            self.phase = MWPhase.REQUEST
            self.log(f"色塊 {self.block.base} 用盡，重新請求")
            self._request()
            return
        self.phase = MWPhase.COMPETE
        self.candidate = color
        # 每個顏色一次慢速競爭，勝出後以快速廣播宣告
        self.contest = MisRound(
            self.node, COMPETE_LEVEL, self.window, self.p_lb,
            tag=color, announce_window=self.flb_slots, announce_probability=self.p_flb,
            on_outcome=self._contest_outcome, repeat=True,
        ).start()

    def _contest_outcome(self, mis: MisRound, outcome: MisOutcome) -> None:
        if outcome is MisOutcome.WON:
            self.phase = MWPhase.DONE
            self.take_color(self.candidate, finished=True)
            self.log(f"取得顏色 {self.candidate}")
            self.beacon()
        elif outcome is MisOutcome.LOST:
            self._compete(self.candidate + 1)

    # ---- 訊息 ----

    @staticmethod
    def _is_leader_signal(msg: Message) -> bool:
        """色塊核發或 leader 的信標（L1 層的 Color）"""
        return msg.kind is MsgKind.BLOCK_GRANT or (msg.kind is MsgKind.COLOR and msg.level == MisLevel.L1)

    def handle(self, msg, sender: int) -> None:
        if not isinstance(msg, Message):
            return
        if msg.kind is MsgKind.BLOCK_REQUEST:
            if self.phase is MWPhase.LEADER and msg.target == self.node.id:
                self._on_request(sender, msg.data)
            return
        if self._is_leader_signal(msg):
            self._on_leader_signal(msg, sender)
        elif self.phase is MWPhase.MIS:
            self.mis.on_message(msg, sender)
            return
        if self.phase is MWPhase.COMPETE:
            if msg.color is not None and msg.color == self.candidate:
                self.contest.lose(sender)
            else:
                self.contest.on_message(msg, sender)

    def on_conflict(self, sender: int) -> None:
        if not self.protocol.correcting:
            return
        if self.phase is MWPhase.LEADER:
            color = redraw_color(max(self.params.delta, 1), self.state.taken(), self.node.rng)
            self.log(f"leader 衝突，隨機改為 {color}")
            self.node.note_redraw()
            self.take_color(color, finished=True)
        elif self.phase is MWPhase.DONE and self.block is not None:
            self.log(f"衝突，回到色塊 {self.block.base} 的第一個顏色")
            self.node.note_redraw()
            self.reopen()
            self._compete(self.block.base)


class MWColoring(Protocol):
    """
    Args:
        correcting: 修正型變體（MWCor）
    """

    machine_class = MWMachine

    def __init__(self, correcting: bool = False, **options):
        super().__init__(**options)
        self.correcting = correcting

    @staticmethod
    def palette_bound(issued_blocks: int) -> int:
        """leader 核發 issued_blocks 個色塊時可能出現的顏色上限（不含）"""
        return 1 + COLOR_BLOCK_SIZE * issued_blocks
