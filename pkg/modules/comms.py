"""
通訊原語模組
本地廣播、快速本地廣播的機率與時窗換算，協定訊息格式，
以及協定共用的隨機優先權 MIS 回合。
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Callable, Optional

from modules.sinr import RangeClass

logger = logging.getLogger(__name__)


class MsgKind(Enum):
    COLOR = "Color"
    PRIORITY = "Priority"
    DOMINATE = "Dominate"
    REQUEST = "Request"
    GRANT = "Grant"
    BLOCK_REQUEST = "BlockRequest"
    BLOCK_GRANT = "BlockGrant"
    DO_NOT_TRANSMIT = "DoNotTransmit"
    START_COLORING = "StartColoring"
    ASK_COLOR = "AskColor"
    COLOR_GRANT = "ColorGrant"
    START_TRANSMIT = "StartTransmit"
    PROBE = "Probe"


@dataclass(frozen=True)
class Message:
    """
    協定訊息。color 為傳送端送出當下的顏色（由核心在每次傳送時填入），
    接收端據此更新 C_v 並偵測衝突。
    """
    kind: MsgKind
    color: Optional[int] = None
    level: int = 0
    tag: Any = None
    priority: float = 0.0
    target: Optional[int] = None
    data: Any = None


@dataclass(frozen=True)
class CommParams:
    """本地廣播參數：txConst、duration、factor 與已知的 Δ"""
    tx_const: float
    duration: int
    factor: float = 1.0
    delta: int = 1
    duration_prime: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.tx_const <= 1.0:
            raise ValueError(f"tx_const 必須介於 (0, 1]: {self.tx_const}")
        if self.duration < 1:
            raise ValueError(f"duration 必須至少為 1: {self.duration}")
        if self.factor <= 0.0:
            raise ValueError(f"factor 必須為正: {self.factor}")
        if self.delta < 0:
            raise ValueError(f"delta 不可為負: {self.delta}")
        if self.duration_prime is not None and not 1 <= self.duration_prime <= self.duration:
            raise ValueError(
                f"duration_prime 必須介於 1 與 duration 之間: {self.duration_prime}"
            )

    @property
    def window(self) -> int:
        """實際使用的廣播時窗：修正型變體以 duration′ 取代 duration"""
        return self.duration_prime if self.duration_prime is not None else self.duration


def lb_probability(c: CommParams) -> float:
    """本地廣播的每時槽傳送機率 txConst/Δ；孤立節點（Δ=0）回傳 1"""
    if c.delta == 0:
        return 1.0
    return min(1.0, c.tx_const / c.delta)


def flb_probability(c: CommParams) -> float:
    return min(1.0, c.tx_const * c.factor)


def flb_duration(c: CommParams) -> int:
    """快速本地廣播時窗 ⌈window/(Δ·factor)⌉，至少 1 個時槽"""
    return max(1, math.ceil(c.window / (max(c.delta, 1) * c.factor)))


def local_broadcast(
    node,
    message,
    params: CommParams,
    fast: bool = False,
    range_class: RangeClass = RangeClass.R1,
    on_done: Optional[Callable[[], None]] = None,
    slots: Optional[int] = None,
):
    """
    以（快速）本地廣播送出訊息。

    Args:
        node: 節點執行期物件（kernel.NodeRuntime）
        message: Message，或回傳 Message 的函式（每次傳送時求值）
        params: 通訊參數
        fast: True 時使用 txConst·factor 與 flb_duration
        range_class: 目標半徑
        on_done: 時窗結束時的回呼
        slots: 指定時窗長度，預設依 fast 取 window 或 flb_duration

    Returns:
        kernel.Broadcast
    """
    probability = flb_probability(params) if fast else lb_probability(params)
    if slots is None:
        slots = flb_duration(params) if fast else params.window
    return node.broadcast(message, probability, slots, range_class=range_class, on_done=on_done)


class MisOutcome(Enum):
    WON = "won"
    LOST = "lost"
    UNDECIDED = "undecided"


class MisLevel(IntEnum):
    """L1 以一般本地廣播競爭，L2 以快速本地廣播競爭"""
    L1 = 1
    L2 = 2


class _Phase(Enum):
    IDLE = 0
    COMPETE = 1
    ANNOUNCE = 2
    DONE = 3


class MisRound:
    """
    隨機優先權 MIS 回合。

    競爭期間節點持續廣播自己的優先權；聽到 (優先權, 編號) 更高者即視為
    落敗候選。時窗結束時未被壓過者進入宣告期，廣播支配訊息，宣告期結束
    即勝出。競爭或宣告期間解碼到同層同標籤的支配訊息者落敗。

    協定機器需把收到的訊息轉交 on_message；回傳 True 表示已處理。
    """

    def __init__(
        self,
        node,
        level: MisLevel,
        window: int,
        probability: float,
        range_class: RangeClass = RangeClass.R1,
        tag: Any = None,
        announce_kind: MsgKind = MsgKind.DOMINATE,
        announce_window: Optional[int] = None,
        announce_probability: Optional[float] = None,
        announce_range: Optional[RangeClass] = None,
        on_outcome: Optional[Callable[["MisRound", MisOutcome], None]] = None,
        repeat: bool = False,
    ):
        self.node = node
        self.level = int(level)
        self.window = window
        self.probability = probability
        self.range_class = range_class
        self.tag = tag
        self.announce_kind = announce_kind
        self.announce_window = window if announce_window is None else announce_window
        self.announce_probability = probability if announce_probability is None else announce_probability
        self.announce_range = range_class if announce_range is None else announce_range
        self.on_outcome = on_outcome
        self.repeat = repeat
        self.priority = 0.0
        self.beaten = False
        self.dominator: Optional[int] = None
        self.outcome: Optional[MisOutcome] = None
        self.rounds = 0
        self._phase = _Phase.IDLE
        self._broadcast = None

    @property
    def active(self) -> bool:
        return self._phase in (_Phase.COMPETE, _Phase.ANNOUNCE)

    def _key(self):
        return (self.priority, self.node.id)

    def start(self) -> "MisRound":
        self.priority = float(self.node.rng.random())
        self.beaten = False
        self.rounds += 1
        self._phase = _Phase.COMPETE
        message = Message(MsgKind.PRIORITY, level=self.level, tag=self.tag, priority=self.priority)
        self._broadcast = self.node.broadcast(
            message, self.probability, self.window,
            range_class=self.range_class, on_done=self._end_compete,
        )
        return self

    def _end_compete(self) -> None:
        if self._phase is not _Phase.COMPETE:
            return
        if self.beaten:
            if self.repeat:
                self.start()
            else:
                self._finish(MisOutcome.UNDECIDED)
            return
        self._phase = _Phase.ANNOUNCE
        message = Message(self.announce_kind, level=self.level, tag=self.tag, priority=self.priority)
        self._broadcast = self.node.broadcast(
            message, self.announce_probability, self.announce_window,
            range_class=self.announce_range, on_done=self._end_announce,
        )

    def _end_announce(self) -> None:
        if self._phase is _Phase.ANNOUNCE:
            self._finish(MisOutcome.WON)

    def _finish(self, outcome: MisOutcome, dominator: Optional[int] = None) -> None:
        self._phase = _Phase.DONE
        self.outcome = outcome
        if dominator is not None:
            self.dominator = dominator
        if self._broadcast is not None:
            self._broadcast.cancel()
            self._broadcast = None
        if self.on_outcome is not None:
            self.on_outcome(self, outcome)

    def on_message(self, msg: Message, sender: int) -> bool:
        if not self.active or msg.level != self.level or msg.tag != self.tag:
            return False
        if msg.kind is MsgKind.PRIORITY:
            if self._phase is _Phase.COMPETE and (msg.priority, sender) > self._key():
                self.beaten = True
            return True
        if msg.kind is self.announce_kind:
            if self._phase is _Phase.COMPETE or (msg.priority, sender) > self._key():
                self._finish(MisOutcome.LOST, sender)
            return True
        return False

    def lose(self, sender: Optional[int] = None) -> None:
        """外部判定落敗（例如 MW 聽到有人已使用競爭中的顏色）"""
        if self.active:
            self._finish(MisOutcome.LOST, sender)

    def cancel(self) -> None:
        """中止回合，不觸發回呼"""
        self._phase = _Phase.DONE
        if self._broadcast is not None:
            self._broadcast.cancel()
            self._broadcast = None


def mis_round(
    node,
    level: MisLevel,
    params: CommParams,
    on_outcome: Optional[Callable[[MisRound, MisOutcome], None]] = None,
    tag: Any = None,
    repeat: bool = False,
) -> MisRound:
    """
    以通訊參數啟動一個 MIS 回合：L1 用 duration 時窗與 txConst/Δ，
    L2 用 flb_duration 時窗與 txConst·factor。
    """
    if level is MisLevel.L2:
        window, probability = flb_duration(params), flb_probability(params)
    else:
        window, probability = params.window, lb_probability(params)
    return MisRound(
        node, level, window, probability, tag=tag, on_outcome=on_outcome, repeat=repeat,
    ).start()
