"""
SINR 干擾模型模組
計算傳輸範圍與廣播範圍，並以幾何 SINR 不等式判斷封包是否可被接收。
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Optional, Sequence, Tuple

Position = Tuple[float, float]


class DegenerateGeometryError(ValueError):
    """傳送端與接收端位於同一點（距離為 0）"""


class RangeClass(Enum):
    """封包的目標半徑類別：R1 為一般廣播範圍，R2 為協調範圍（r2 = 3·r1）"""
    R1 = 1
    R2 = 2


@dataclass(frozen=True)
class SinrParams:
    """實體層常數：路徑衰減指數、SINR 門檻、雜訊、發射功率與廣播範圍參數"""
    alpha: float = 4.0
    beta: float = 10.0
    noise: float = 1e-9
    power: float = 1.0
    range_divisor: float = 2.0
    r2_factor: float = 3.0
    r2_power_boost: bool = False

    def __post_init__(self):
        if not 2.0 <= self.alpha <= 6.0:
            raise ValueError(f"alpha 必須介於 2 與 6 之間: {self.alpha}")
        if self.beta <= 1.0:
            raise ValueError(f"beta 必須大於 1: {self.beta}")
        if self.noise <= 0.0:
            raise ValueError(f"noise 必須大於 0: {self.noise}")
        if self.power <= 0.0:
            raise ValueError(f"power 必須大於 0: {self.power}")
        if self.range_divisor < 1.0:
            raise ValueError(f"range_divisor 不可小於 1: {self.range_divisor}")
        if self.r2_factor < 1.0:
            raise ValueError(f"r2_factor 不可小於 1: {self.r2_factor}")


@dataclass(frozen=True)
class Packet:
    """空中傳輸中的封包"""
    origin: int
    origin_pos: Position
    broadcast_id: int
    start: float
    end: float
    range_class: RangeClass = RangeClass.R1
    payload: Any = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"封包結束時間必須晚於開始時間: start={self.start}, end={self.end}")

    def overlaps(self, other: "Packet") -> bool:
        return self.start < other.end and other.start < self.end

    def shares_broadcast(self, other: "Packet") -> bool:
        """同一節點、同一個 broadcast ID（非 -1）的封包彼此不構成干擾"""
        return (
            self.broadcast_id != -1
            and self.origin == other.origin
            and self.broadcast_id == other.broadcast_id
        )


def transmission_range(p: SinrParams) -> float:
    """無干擾時可成功接收的最遠距離 (P/(βN))^(1/α)"""
    return (p.power / (p.beta * p.noise)) ** (1.0 / p.alpha)


def broadcast_range(p: SinrParams) -> float:
    """
    廣播範圍 (P/(d·β·N))^(1/α)，d 為 range_divisor。

    鄰居關係與 Δ 都以此範圍為準。
    """
    return (p.power / (p.range_divisor * p.beta * p.noise)) ** (1.0 / p.alpha)


def address_radius(range_class: RangeClass, p: SinrParams) -> float:
    """封包預期接收者所在的半徑"""
    if range_class is RangeClass.R2:
        return p.r2_factor * broadcast_range(p)
    return broadcast_range(p)


def emitted_power(packet: Packet, p: SinrParams) -> float:
    if packet.range_class is RangeClass.R2 and p.r2_power_boost:
        return p.power * p.r2_factor ** p.alpha
    return p.power


def _distance(a: Position, b: Position) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def sinr_feasible(
    sender: Packet,
    receiver_pos: Position,
    concurrent: Iterable[Packet],
    p: SinrParams,
) -> bool:
    """
    判斷 sender 封包在 receiver_pos 是否滿足 SINR 門檻。

    Args:
        sender: 欲接收的封包
        receiver_pos: 接收端位置
        concurrent: 與接收視窗重疊的所有封包（可包含 sender 本身）
        p: SINR 參數

    Returns:
        SINR >= beta 時為 True（門檻含等號）

    Raises:
        DegenerateGeometryError: 傳送端與接收端距離為 0
    """
    d = _distance(sender.origin_pos, receiver_pos)
    if d == 0.0:
        raise DegenerateGeometryError(
            f"節點 {sender.origin} 與接收端位置重疊: {receiver_pos}"
        )
    signal = emitted_power(sender, p) / d ** p.alpha

    terms = []
    for other in concurrent:
        if other is sender or sender.shares_broadcast(other):
            continue
        dw = _distance(other.origin_pos, receiver_pos)
        if dw == 0.0:
            # 干擾源就在接收端上
            return False
        terms.append(emitted_power(other, p) / dw ** p.alpha)

    # fsum 與加總順序無關，暴力驗證可逐位元比對
    return signal / (math.fsum(terms) + p.noise) >= p.beta


def _lock_key(packet: Packet, receiver_pos: Position, p: SinrParams) -> Tuple[float, float, int]:
    # 同時開始的封包以接收功率較強者優先
    d = _distance(packet.origin_pos, receiver_pos)
    strength = math.inf if d == 0.0 else emitted_power(packet, p) / d ** p.alpha
    return (packet.start, -strength, packet.origin)


def deliverable_set(
    receiver: int,
    receiver_pos: Position,
    instant: float,
    in_flight: Sequence[Packet],
    p: SinrParams,
) -> Optional[Packet]:
    """
    找出接收端在 instant 時刻完成解碼的封包。

    候選為在 instant 結束、且接收端位於其目標半徑內的封包。接收端會鎖定
    最早開始的可接收封包，其餘重疊者一律丟棄；接收端若在該封包期間
    自己也在傳送，則無法接收。

    Args:
        receiver: 接收端節點編號
        receiver_pos: 接收端目前位置
        instant: 評估時刻（封包結束時間）
        in_flight: 所有可能與候選封包重疊的封包
        p: SINR 參數

    Returns:
        成功解碼的封包，否則為 None
    """
    receivable = [
        pk for pk in in_flight
        if pk.origin != receiver
        and _distance(pk.origin_pos, receiver_pos) <= address_radius(pk.range_class, p)
    ]
    ending = [pk for pk in receivable if pk.end == instant]
    if not ending:
        return None

    target = min(ending, key=lambda pk: _lock_key(pk, receiver_pos, p))
    target_key = _lock_key(target, receiver_pos, p)

    for pk in receivable:
        if pk is not target and pk.overlaps(target) and _lock_key(pk, receiver_pos, p) < target_key:
            # 接收端已鎖定更早開始的封包
            return None

    for pk in in_flight:
        if pk.origin == receiver and pk.overlaps(target):
            return None

    concurrent = [pk for pk in in_flight if pk.overlaps(target)]
    try:
        feasible = sinr_feasible(target, receiver_pos, concurrent, p)
    except DegenerateGeometryError:
        return None
    return target if feasible else None
