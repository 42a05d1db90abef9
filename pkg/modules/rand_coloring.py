"""
隨機著色協定
Rand4DColor 與其變體：Resp（先聆聽再選色並避開已知顏色）、
Final（連續 duration 個時槽無衝突即定案）、Rand1D（調色盤 Δ+1）。
"""

import math

from modules.metrics import FINISH_FLAG, FINISH_VALID
from modules.protocols import NodeMachine, Protocol, redraw_color

REDRAW_IMMEDIATE = "immediate"
REDRAW_PHASE_END = "phase_end"


class RandMachine(NodeMachine):

    def __init__(self, node, params, protocol):
        super().__init__(node, params, protocol)
        self._final_timer = None
        self._redraw_pending = False

    def palette_size(self) -> int:
        return self.protocol.palette_bound(self.params.delta)

    def on_wake(self) -> None:
        if self.protocol.respect:
            self.log(f"聆聽 {self.window} 個時槽")
            self.node.after(self.window, self._first_pick)
        else:
            self._first_pick()

    def _forbidden(self):
        return self.state.taken() if self.protocol.respect else ()

    def _first_pick(self) -> None:
        color = redraw_color(self.state.palette_size, self._forbidden(), self.node.rng)
        self.take_color(color)
        self.beacon()
        if self.protocol.finalize:
            self._arm_finalize()

    def _arm_finalize(self) -> None:
        if self._final_timer is not None:
            self._final_timer.cancel()
        self._final_timer = self.node.after(self.window, self._finalize)

    def _finalize(self) -> None:
        if self._redraw_pending:
            return
        self.log(f"顏色 {self.state.color} 定案")
        self.state.finalized = True
        self.node.set_finished(True)

    def on_conflict(self, sender: int) -> None:
        if self.state.finalized:
            return
        if self.protocol.redraw == REDRAW_IMMEDIATE:
            self._redraw()
            return
        if self._redraw_pending:
            return
        # 等到衝突所在的階段結束才重抽
        self._redraw_pending = True
        length = self.protocol.phase_length(self.params)
        boundary = (self.node.current_slot() // length + 1) * length
        self.node.after_time(self.node.slot_time(boundary), self._redraw)

    def _redraw(self) -> None:
        self._redraw_pending = False
        if self.state.finalized:
            return
        color = redraw_color(self.state.palette_size, self._forbidden(), self.node.rng)
        self.log(f"衝突，重抽 {self.state.color} -> {color}")
        self.node.note_redraw()
        self.take_color(color)
        if self.protocol.finalize:
            self._arm_finalize()


class RandColoring(Protocol):
    """
    Rand4DColor 家族。

    Args:
        respect: 先聆聽 duration 個時槽，重抽時避開聽到的鄰居顏色
        finalize: 連續 duration 個時槽無衝突即定案
        one_delta: 調色盤改為 Δ+1
        redraw: "immediate"（偵測到衝突即重抽）或 "phase_end"（階段結束才重抽）
    """

    machine_class = RandMachine

    def __init__(self, respect: bool = False, finalize: bool = False, one_delta: bool = False,
                 redraw: str = REDRAW_IMMEDIATE, **options):
        super().__init__(**options)
        if redraw not in (REDRAW_IMMEDIATE, REDRAW_PHASE_END):
            raise ValueError(f"未知的重抽策略: {redraw}")
        self.respect = respect
        self.finalize = finalize
        self.one_delta = one_delta
        self.redraw = redraw
        self.finish_mode = FINISH_FLAG if finalize else FINISH_VALID

    @staticmethod
    def phase_length(params) -> int:
        """階段長度 ⌈duration·factor⌉，至少 1 個時槽"""
        return max(1, math.ceil(params.duration * params.factor))

    def palette_bound(self, delta: int) -> int:
        """調色盤大小，所有顏色都小於此值"""
        delta = max(delta, 1)
        return delta + 1 if self.one_delta else 4 * delta
