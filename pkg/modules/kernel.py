"""
模擬核心模組
以 simpy 事件佇列推進模擬時間：每個節點有自己的時槽相位（喚醒時間 + k），
封包經 SINR 模型決定是否被解碼，再交給節點的協定狀態機處理。
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from heapq import heappush
from typing import Any, Callable, List, Optional, Sequence

import numpy as np
import simpy

from modules.comms import Message
from modules.deployment import Topology, build_topology
from modules.metrics import MetricsCollector, RunMetrics
from modules.mobility import MobilitySpec, RandomDirectionMobility
from modules.sinr import Packet, RangeClass, SinrParams, address_radius, deliverable_set

logger = logging.getLogger(__name__)

# 同一時刻的事件處理順序：先結束傳輸，最後才開始新的傳輸
PRIORITY_TX_END = 0
PRIORITY_MOBILITY = 1
PRIORITY_WAKE = 2
PRIORITY_TIMER = 3
PRIORITY_TX_START = 4
PRIORITY_SAMPLE = 5

# 協定層共用的亂數流標記（與節點編號無關）
PROTOCOL_STREAM = 2

_EPS = 1e-9


class SyncMode(str, Enum):
    ASYNC = "Async"
    SYNC_LOCKSTEP = "SyncLockstep"


@dataclass(frozen=True)
class KernelConfig:
    """模擬核心設定"""
    mode: SyncMode = SyncMode.ASYNC
    transmission_time: float = 0.999
    max_slots: int = 200_000
    master_seed: int = 0
    wake_window: float = 10.0
    mobility: Optional[MobilitySpec] = None
    stop_on_termination: bool = True
    record_metrics: bool = True
    record_packets: bool = False
    sample_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "mode", SyncMode(self.mode))
        if not 0.0 < self.transmission_time < 1.0:
            raise ValueError(f"transmission_time 必須介於 (0, 1): {self.transmission_time}")
        if self.max_slots < 1:
            raise ValueError(f"max_slots 必須至少為 1: {self.max_slots}")
        if self.wake_window < 0:
            raise ValueError(f"wake_window 不可為負: {self.wake_window}")
        if self.sample_every < 1:
            raise ValueError(f"sample_every 必須至少為 1: {self.sample_every}")
        if self.mobility is not None and self.mode is not SyncMode.SYNC_LOCKSTEP:
            raise ValueError("啟用移動模型時必須使用 SyncLockstep 模式")


class _SlotEnvironment(simpy.Environment):
    """以絕對時間排程，避免 now + (t - now) 的捨入誤差打亂同時刻事件的順序"""

    def schedule_at(self, event: simpy.Event, priority: int, at: float) -> None:
        heappush(self._queue, (at, priority, next(self._eid), event))


class _Tick(simpy.Event):
    def __init__(self, env: _SlotEnvironment, at: float, priority: int, callback: Callable[[], None]):
        super().__init__(env)
        self._ok = True
        self._value = None
        self.callbacks.append(lambda _event: callback())
        env.schedule_at(self, priority, at)


class Timer:
    """可取消的計時器"""

    def __init__(self, kernel: "Kernel", at: float, callback: Callable[[], None], priority: int = PRIORITY_TIMER):
        self.at = at
        self.cancelled = False
        self._callback = callback
        kernel._at(at, priority, self._fire)

    def _fire(self) -> None:
        if not self.cancelled:
            self.cancelled = True
            self._callback()

    def cancel(self) -> None:
        self.cancelled = True


class Broadcast:
    """節點目前的傳送工作：在 [first_slot, end_slot) 的每個時槽以 probability 傳送"""

    def __init__(
        self,
        node: "NodeRuntime",
        broadcast_id: int,
        message: Any,
        probability: float,
        first_slot: int,
        end_slot: Optional[int],
        range_class: RangeClass,
        on_done: Optional[Callable[[], None]],
    ):
        self.node = node
        self.broadcast_id = broadcast_id
        self.message = message
        self.probability = probability
        self.first_slot = first_slot
        self.end_slot = end_slot
        self.range_class = range_class
        self.on_done = on_done
        self.timer: Optional[Timer] = None
        self.sent = 0

    @property
    def active(self) -> bool:
        return self.node._current is self

    def cancel(self) -> None:
        if self.active:
            self.node.silence()

    def _complete(self) -> None:
        if not self.active:
            return
        self.node._current = None
        if self.on_done is not None:
            self.on_done()


class NodeRuntime:
    """單一節點的執行期狀態；協定機器只透過這個介面操作節點"""

    def __init__(self, kernel: "Kernel", node_id: int, wake_time: float, rng: np.random.Generator):
        self.kernel = kernel
        self.id = node_id
        self.wake_time = wake_time
        self.rng = rng
        self.machine = None
        self.color: Optional[int] = None
        self.finished = False
        self.awake = False
        self._current: Optional[Broadcast] = None
        self._broadcast_counter = 0

    @property
    def position(self) -> np.ndarray:
        return self.kernel.positions[self.id]

    @property
    def now(self) -> float:
        return self.kernel.now

    @property
    def transmission_time(self) -> float:
        return self.kernel.config.transmission_time

    @property
    def transmitting(self) -> bool:
        return self._current is not None

    @property
    def current(self) -> Optional[Broadcast]:
        return self._current

    def slot_time(self, slot: int) -> float:
        return self.wake_time + slot

    def current_slot(self) -> int:
        """目前時刻之後（含）的第一個時槽邊界"""
        return max(0, math.ceil(self.kernel.now - self.wake_time - _EPS))

    def broadcast(
        self,
        message: Any,
        probability: float,
        slots: Optional[int] = None,
        range_class: RangeClass = RangeClass.R1,
        on_done: Optional[Callable[[], None]] = None,
    ) -> Broadcast:
        """
        以新的傳送工作取代目前的工作。

        Args:
            message: Message，或每次傳送時呼叫以取得 Message 的函式
            probability: 每時槽傳送機率
            slots: 時窗長度；None 表示持續到被取代或停止
            range_class: 目標半徑
            on_done: 時窗結束時的回呼（被取代時不會呼叫）
        """
        self.silence()
        self._broadcast_counter += 1
        first = self.current_slot()
        end = None if slots is None else first + int(slots)
        job = Broadcast(self, self._broadcast_counter, message, probability, first, end, range_class, on_done)
        self._current = job
        if slots is not None:
            at = self.kernel.now if slots <= 0 else self.slot_time(end)
            job.timer = Timer(self.kernel, at, job._complete)
        if slots is None or slots > 0:
            self._arm(job, first)
        return job

    def _arm(self, job: Broadcast, slot: int) -> None:
        # 逐時槽的 Bernoulli 試驗改以幾何分布一次抽出下一次傳送的時槽
        p = job.probability
        if p <= 0.0:
            return
        gap = 1 if p >= 1.0 else int(self.rng.geometric(p))
        k = slot + gap - 1
        if job.end_slot is not None and k >= job.end_slot:
            return
        self.kernel._at(self.slot_time(k), PRIORITY_TX_START, lambda: self.kernel.node_slot(self, k, job))

    def silence(self) -> None:
        if self._current is not None:
            if self._current.timer is not None:
                self._current.timer.cancel()
            self._current = None

    def after(self, slots: int, callback: Callable[[], None]) -> Timer:
        """在 slots 個時槽之後（以下一個時槽邊界起算）呼叫 callback"""
        return Timer(self.kernel, self.slot_time(self.current_slot() + int(slots)), callback)

    def after_time(self, at: float, callback: Callable[[], None]) -> Timer:
        return Timer(self.kernel, max(at, self.kernel.now), callback)

    def set_color(self, color: Optional[int]) -> None:
        if color == self.color:
            return
        self.color = color
        self.kernel.metrics.on_color_change(self.id, color, self.kernel.now)

    def set_finished(self, finished: bool = True) -> None:
        if finished == self.finished:
            return
        self.finished = finished
        self.kernel.metrics.on_finished_change(self.id, finished, self.kernel.now)

    def note_redraw(self) -> None:
        self.kernel.metrics.on_redraw(self.id)


class Kernel:
    """
    單次模擬。

    Args:
        topology: 初始拓樸（含座標）
        protocol: protocols.Protocol 實例
        config: 核心設定
        params: 通訊參數
        sinr: SINR 參數
        late_positions: 晚醒節點的預先抽好的座標（喚醒實驗用）
    """

    def __init__(
        self,
        topology: Topology,
        protocol,
        config: KernelConfig,
        params,
        sinr: Optional[SinrParams] = None,
        late_positions: Optional[np.ndarray] = None,
    ):
        self.config = config
        self.protocol = protocol
        self.params = params
        self.sinr = sinr or SinrParams()
        self.topology = topology
        self.positions = np.array(topology.positions, dtype=float).reshape(-1, 2)
        self.env = _SlotEnvironment()
        self.metrics = MetricsCollector(topology, protocol.finish_mode, record=config.record_metrics)
        self.nodes: List[NodeRuntime] = []
        self.packet_log: List[tuple] = []
        self._air: List[Packet] = []
        self._late_positions = np.empty((0, 2)) if late_positions is None else np.asarray(late_positions, float)
        self._late_pending = len(self._late_positions) > 0
        self._stopped = False
        self.first_wake = math.inf
        self.mobility: Optional[RandomDirectionMobility] = None
        if config.mobility is not None:
            self.mobility = RandomDirectionMobility(config.mobility, topology.n, config.master_seed)
        protocol.prepare(
            topology, protocol.effective_params(params),
            np.random.default_rng([config.master_seed, 0, PROTOCOL_STREAM]),
        )
        self._create_nodes(range(topology.n), 0.0)

    @property
    def now(self) -> float:
        return self.env.now

    def _at(self, at: float, priority: int, callback: Callable[[], None]) -> None:
        _Tick(self.env, at, priority, callback)

    def _create_nodes(self, ids: Sequence[int], at: float) -> None:
        for node_id in ids:
            rng = np.random.default_rng([self.config.master_seed, node_id])
            wake = at + float(rng.uniform(0.0, self.config.wake_window))
            if self.config.mode is SyncMode.SYNC_LOCKSTEP:
                wake = float(math.ceil(wake))
            node = NodeRuntime(self, node_id, wake, rng)
            node.machine = self.protocol.machine(node, self.params)
            self.nodes.append(node)
            if at == 0.0:
                self.first_wake = min(self.first_wake, wake)
            self._at(wake, PRIORITY_WAKE, lambda node=node: self._wake(node))

    def _wake(self, node: NodeRuntime) -> None:
        node.awake = True
        logger.debug(f"節點 {node.id} 於 {self.now:.3f} 喚醒")
        node.machine.on_wake()

    def node_slot(self, node: NodeRuntime, slot: int, job: Broadcast) -> Optional[Packet]:
        """
        節點在自己的第 slot 個時槽傳送 job 的訊息。

        job 已被取代時什麼都不做；否則注入一個長度為 transmission_time 的
        封包，並抽出同一工作的下一次傳送時槽。
        """
        if node._current is not job or not node.awake:
            return None
        payload = job.message() if callable(job.message) else job.message
        if isinstance(payload, Message) and payload.color is None and node.color is not None:
            payload = replace(payload, color=node.color)
        start = self.now
        packet = Packet(
            origin=node.id,
            origin_pos=(float(self.positions[node.id, 0]), float(self.positions[node.id, 1])),
            broadcast_id=job.broadcast_id,
            start=start,
            end=start + self.config.transmission_time,
            range_class=job.range_class,
            payload=payload,
        )
        self._air.append(packet)
        job.sent += 1
        if self.config.record_packets:
            kind = payload.kind.value if isinstance(payload, Message) else type(payload).__name__
            self.packet_log.append((start, node.id, job.broadcast_id, kind))
        self._at(packet.end, PRIORITY_TX_END, lambda: self._complete(packet))
        node._arm(job, slot + 1)
        return packet

    def _complete(self, packet: Packet) -> None:
        now = self.now
        self._air = [pk for pk in self._air if pk.end > now - 1.0]
        radius = address_radius(packet.range_class, self.sinr) * (1.0 + _EPS)
        offsets = self.positions - np.asarray(packet.origin_pos)
        dist = np.hypot(offsets[:, 0], offsets[:, 1])
        for v in np.flatnonzero(dist <= radius):
            v = int(v)
            node = self.nodes[v]
            if v == packet.origin or not node.awake or node.wake_time > packet.start:
                continue
            decoded = deliverable_set(v, tuple(self.positions[v]), now, self._air, self.sinr)
            if decoded is packet:
                assert not any(pk.origin == v and pk.overlaps(packet) for pk in self._air), (
                    f"節點 {v} 在傳送期間解碼了節點 {packet.origin} 的封包"
                )
                node.machine.on_receive(packet.payload, packet.origin)

    def _mobility_tick(self, t: int) -> None:
        self.positions = self.mobility.step(self.positions)
        self.topology = build_topology(self.positions, self.sinr)
        self.metrics.set_topology(self.topology, float(t))
        if t + 1 <= self.config.max_slots:
            self._at(float(t + 1), PRIORITY_MOBILITY, lambda: self._mobility_tick(t + 1))

    def _sample_tick(self, t: int) -> None:
        self.metrics.sample(float(t))
        nxt = t + self.config.sample_every
        if nxt <= self.config.max_slots:
            self._at(float(nxt), PRIORITY_SAMPLE, lambda: self._sample_tick(nxt))

    def spawn_late(self, count: int, at: float) -> None:
        """
        在時刻 at 加入 count 個晚醒節點，並開始統計受擾節點。

        新節點使用預先抽好的座標，喚醒時間為 at + U[0, wake_window]。
        """
        self._late_pending = False
        count = min(int(count), len(self._late_positions))
        pre = list(range(len(self.nodes)))
        self.metrics.begin_disturbance_window(pre, at)
        if count == 0:
            return
        start = len(self.nodes)
        self.positions = np.vstack([self.positions, self._late_positions[:count]])
        self.topology = build_topology(self.positions, self.sinr)
        self.metrics.set_topology(self.topology, at)
        if self.mobility is not None:
            self.mobility.add_nodes(count)
        logger.info(f"於 {at:.1f} 加入 {count} 個晚醒節點")
        self._create_nodes(range(start, start + count), at)

    def _done(self) -> bool:
        if not self.config.stop_on_termination or not self.metrics.all_done():
            return False
        if self._late_pending:
            self.spawn_late(len(self._late_positions), self.now)
            return False
        return True

    def run(self) -> RunMetrics:
        if self.mobility is not None:
            self._at(1.0, PRIORITY_MOBILITY, lambda: self._mobility_tick(1))
        self._at(float(self.config.sample_every), PRIORITY_SAMPLE, lambda: self._sample_tick(self.config.sample_every))

        terminated = False
        limit = float(self.config.max_slots)
        while self.env.peek() <= limit:
            self.env.step()
            if self._done():
                terminated = True
                break

        if terminated:
            end_time = self.now
        elif not self.config.stop_on_termination:
            end_time = limit
            terminated = True
        else:
            end_time = self.now if self.env.peek() == math.inf else limit
            logger.warning(
                f"模擬未在 {self.config.max_slots} 個時槽內結束 "
                f"(完成 {self.metrics.finished_count}/{self.metrics.n})"
            )
        runtime = math.ceil(end_time - _EPS)
        return self.metrics.finalize(end_time, terminated, runtime, self.first_wake)


def run(
    topology: Topology,
    protocol,
    kernel_config: KernelConfig,
    comm_params,
    sinr: Optional[SinrParams] = None,
    late_positions: Optional[np.ndarray] = None,
) -> RunMetrics:
    """
    執行一次模擬。

    Returns:
        RunMetrics；相同 master_seed 得到逐位元相同的結果
    """
    return Kernel(topology, protocol, kernel_config, comm_params, sinr, late_positions).run()
