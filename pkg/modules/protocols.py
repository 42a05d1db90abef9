"""
協定共用模組
著色狀態、重抽顏色、預先計算的合法著色、協定基底類別與協定註冊表。
各協定的狀態機在 rand_coloring、color_reduction、mw_coloring、yu_coloring。
"""

import importlib
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from modules.comms import CommParams, Message, MsgKind, flb_duration, flb_probability, lb_probability
from modules.deployment import Topology
from modules.metrics import FINISH_FLAG

logger = logging.getLogger(__name__)

COLOR_BLOCK_SIZE = 8


@dataclass
class ColorState:
    """節點的著色狀態：目前顏色、調色盤大小、是否定案，以及聽到的鄰居顏色 C_v"""
    color: Optional[int] = None
    palette_size: int = 1
    finalized: bool = False
    neighbor_colors: Dict[int, int] = field(default_factory=dict)

    def taken(self) -> Set[int]:
        return set(self.neighbor_colors.values())

    def free_colors(self) -> Set[int]:
        """F_v：調色盤中尚未被鄰居使用的顏色"""
        return set(range(self.palette_size)) - self.taken()

    def smallest_free(self) -> int:
        """不在 C_v 中的最小顏色（可能超出調色盤）"""
        taken = self.taken()
        c = 0
        while c in taken:
            c += 1
        return c


@dataclass(frozen=True)
class ActiveInterval:
    """ColorReduction 的活動區間：start 為模擬時刻，長度與週期以時槽計"""
    start: float
    length_slots: int
    schedule_length_slots: int

    def __post_init__(self):
        if self.length_slots <= 0:
            raise ValueError(f"活動區間長度必須為正: {self.length_slots}")
        if self.schedule_length_slots < self.length_slots:
            raise ValueError("排程週期不可短於活動區間")

    def next_period(self) -> "ActiveInterval":
        return replace(self, start=self.start + self.schedule_length_slots)


@dataclass(frozen=True)
class ColorBlock:
    """MWColor 的色塊 {base, ..., base+size-1}"""
    base: int
    size: int = COLOR_BLOCK_SIZE

    def __post_init__(self):
        if self.base < 1:
            raise ValueError(f"色塊起點必須至少為 1（0 保留給 leader）: {self.base}")
        if self.size < 1:
            raise ValueError(f"色塊大小必須為正: {self.size}")

    @property
    def last(self) -> int:
        return self.base + self.size - 1

    def colors(self) -> range:
        return range(self.base, self.base + self.size)


def redraw_color(palette_size: int, forbidden: Iterable[int], rng: np.random.Generator) -> int:
    """
    從調色盤中排除 forbidden 後均勻抽一個顏色。

    Args:
        palette_size: 調色盤大小
        forbidden: 不可使用的顏色
        rng: 節點的亂數流

    Returns:
        抽到的顏色；可用顏色為空時退回整個調色盤均勻抽樣
    """
    if palette_size < 1:
        raise ValueError(f"調色盤大小必須為正: {palette_size}")
    forbidden = set(forbidden)
    allowed = [c for c in range(palette_size) if c not in forbidden]
    if not allowed:
        logger.warning(f"調色盤 {palette_size} 色已全被占用，改從整個調色盤抽樣")
        return int(rng.integers(palette_size))
    return allowed[int(rng.integers(len(allowed)))]


def precompute_valid_coloring(topology: Topology, palette_size: int, rng: np.random.Generator) -> List[int]:
    """
    以隨機順序逐一著色，每個節點從鄰居未用的顏色中均勻挑選。

    Raises:
        ValueError: 調色盤小於 Δ+1，無法保證合法
    """
    if palette_size < topology.delta + 1:
        raise ValueError(f"調色盤 {palette_size} 小於 Δ+1 = {topology.delta + 1}")
    colors = [-1] * topology.n
    for v in rng.permutation(topology.n):
        v = int(v)
        taken = {colors[u] for u in topology.adjacency[v]}
        free = [c for c in range(palette_size) if c not in taken]
        colors[v] = free[int(rng.integers(len(free)))]
    return colors


class NodeMachine:
    """
    節點上的協定狀態機基底。

    所有帶顏色的訊息都會先更新 C_v；若與自己的顏色相同則呼叫 on_conflict，
    接著交給 handle 處理訊息本身。
    """

    def __init__(self, node, params: CommParams, protocol: "Protocol"):
        self.node = node
        self.params = params
        self.protocol = protocol
        self.state = ColorState(palette_size=self.palette_size())
        self.conflicts_heard = 0

    def palette_size(self) -> int:
        return max(self.params.delta, 0) + 1

    @property
    def p_lb(self) -> float:
        return lb_probability(self.params)

    @property
    def p_flb(self) -> float:
        return flb_probability(self.params)

    @property
    def flb_slots(self) -> int:
        return flb_duration(self.params)

    @property
    def window(self) -> int:
        return self.params.window

    def on_wake(self) -> None:
        pass

    def on_receive(self, msg, sender: int) -> None:
        if isinstance(msg, Message) and msg.color is not None:
            self.state.neighbor_colors[sender] = msg.color
            if self.node.color is not None and msg.color == self.node.color:
                self.conflicts_heard += 1
                self.on_conflict(sender)
        self.handle(msg, sender)

    def on_conflict(self, sender: int) -> None:
        pass

    def handle(self, msg, sender: int) -> None:
        pass

    def take_color(self, color: int, finished: bool = False) -> None:
        self.state.color = color
        self.node.set_color(color)
        if finished:
            self.state.finalized = True
            self.node.set_finished(True)

    def reopen(self) -> None:
        """修正型變體重新進入著色流程：保留顏色直到選出新色"""
        self.state.finalized = False
        self.node.set_finished(False)

    def beacon(self, kind: MsgKind = MsgKind.COLOR, **fields):
        """以本地廣播機率持續送出帶目前顏色的訊息"""
        return self.node.broadcast(Message(kind, **fields), self.p_lb, None)

    def log(self, text: str) -> None:
        logger.debug(f"[{type(self.protocol).__name__} #{self.node.id} t={self.node.now:.3f}] {text}")


class Protocol:
    """
    協定工廠：持有變體選項，為每個節點建立狀態機。

    factor、duration_prime 若有設定，會覆寫傳入的通訊參數。
    """

    name = "Protocol"
    finish_mode = FINISH_FLAG
    machine_class = NodeMachine
    correcting = False

    def __init__(self, factor: Optional[float] = None, duration_prime: Optional[int] = None,
                 mobile: bool = False, **options):
        self.factor = factor
        self.duration_prime = duration_prime
        self.mobile = mobile
        self.options = options

    def effective_params(self, params: CommParams) -> CommParams:
        changes = {}
        if self.factor is not None:
            changes["factor"] = self.factor
        if self.duration_prime is not None:
            changes["duration_prime"] = min(self.duration_prime, params.duration)
        return replace(params, **changes) if changes else params

    def prepare(self, topology: Topology, params: CommParams, rng: np.random.Generator) -> None:
        """模擬開始前的全域準備（例如預先計算初始著色）"""

    def machine(self, node, params: CommParams) -> NodeMachine:
        return self.machine_class(node, self.effective_params(params), self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, factor={self.factor}, duration_prime={self.duration_prime})"


class LBProbeMachine(NodeMachine):
    """校正用：持續廣播 PROBE，聽到所有鄰居後即完成"""

    def on_wake(self) -> None:
        self.heard: Set[int] = set()
        self.expected = self.protocol.expected.get(self.node.id, set())
        self.node.broadcast(Message(MsgKind.PROBE), self.p_lb, None)
        self._check()

    def handle(self, msg, sender: int) -> None:
        if isinstance(msg, Message) and msg.kind is MsgKind.PROBE:
            self.heard.add(sender)
            self._check()

    def _check(self) -> None:
        if not self.node.finished and self.expected <= self.heard:
            self.node.set_finished(True)


class LBProbe(Protocol):
    """量測本地廣播在某個 txConst 下讓所有鄰居互相聽到所需的時間"""

    name = "LBProbe"
    machine_class = LBProbeMachine

    def __init__(self, **options):
        super().__init__(**options)
        self.expected: Dict[int, Set[int]] = {}

    def prepare(self, topology: Topology, params: CommParams, rng: np.random.Generator) -> None:
        self.expected = {v: set(nbrs) for v, nbrs in enumerate(topology.adjacency)}


# 協定名稱 -> (模組, 類別, 預設選項)
_REGISTRY = {
    "Rand4DColor": ("modules.rand_coloring", "RandColoring", {}),
    "Rand4DRespColor": ("modules.rand_coloring", "RandColoring", {"respect": True}),
    "Rand4DFinalColor": ("modules.rand_coloring", "RandColoring", {"finalize": True}),
    "Rand1DColor": ("modules.rand_coloring", "RandColoring", {"one_delta": True}),
    "ColorReduction": ("modules.color_reduction", "ColorReduction", {"initial": "valid"}),
    "CRRandColor": ("modules.color_reduction", "ColorReduction", {"initial": "random"}),
    "CRRCor": ("modules.color_reduction", "ColorReduction", {"initial": "random", "correcting": True}),
    "MWColor": ("modules.mw_coloring", "MWColoring", {}),
    "MWCor": ("modules.mw_coloring", "MWColoring", {"correcting": True}),
    "YuColor": ("modules.yu_coloring", "YuColoring", {}),
    "YuCor": ("modules.yu_coloring", "YuColoring", {"correcting": True}),
    "LBProbe": ("modules.protocols", "LBProbe", {}),
}

# 修正型變體對應的基底協定
CORRECTING_BASES = {"CRRandColor": "CRRCor", "MWColor": "MWCor", "YuColor": "YuCor"}


def protocol_names() -> List[str]:
    return list(_REGISTRY)


def canonical_name(name: str) -> str:
    key = name.replace("-", "").replace("_", "").lower()
    for known in _REGISTRY:
        if known.lower() == key:
            return known
    raise ValueError(f"未知的協定: {name}（可用: {', '.join(_REGISTRY)}）")


def build_protocol(name: str, **options) -> Protocol:
    """
    依名稱建立協定實例。

    Args:
        name: 協定名稱（不分大小寫），見 protocol_names()
        **options: 覆寫的變體選項，例如 factor、duration_prime、redraw

    Raises:
        ValueError: 未知的協定名稱
    """
    name = canonical_name(name)
    module_name, class_name, defaults = _REGISTRY[name]
    cls = getattr(importlib.import_module(module_name), class_name)
    merged = {**defaults, **{k: v for k, v in options.items() if v is not None}}
    protocol = cls(**merged)
    protocol.name = name
    return protocol


def correcting_wrap(base: str, duration_prime: int, **options) -> Protocol:
    """
    把 CRRandColor、MWColor 或 YuColor 換成對應的修正型變體，
    以 duration′ 取代所有時窗計算中的 duration。
    """
    base = canonical_name(base)
    if base not in CORRECTING_BASES:
        raise ValueError(f"{base} 沒有修正型變體（可用: {', '.join(CORRECTING_BASES)}）")
    if duration_prime < 1:
        raise ValueError(f"duration_prime 必須至少為 1: {duration_prime}")
    return build_protocol(CORRECTING_BASES[base], duration_prime=duration_prime, **options)

