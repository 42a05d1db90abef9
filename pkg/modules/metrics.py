"""
量測模組
全知的衝突判定、進度曲線、重抽次數與受擾節點統計。量測結果從不回饋給節點。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from modules.deployment import Topology

logger = logging.getLogger(__name__)

FINISH_VALID = "valid"
FINISH_FLAG = "finished"


@dataclass
class RunMetrics:
    """單次模擬的量測結果"""
    runtime_slots: int
    terminated: bool
    final_conflicts: int
    redraw_total: int
    disturbed_count: int
    end_time: float
    first_wake: float
    n_nodes: int
    delta: int
    final_colors: Tuple[int, ...] = ()
    conflicts_series: List[Tuple[float, int]] = field(default_factory=list)
    finished_series: List[Tuple[float, int]] = field(default_factory=list)
    valid_fraction_series: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def max_color(self) -> int:
        return max(self.final_colors, default=-1)

    def valid_fraction_mean(self) -> float:
        if not self.valid_fraction_series:
            return math.nan
        return float(np.mean([value for _, value in self.valid_fraction_series]))

    def progress_frame(self) -> pd.DataFrame:
        """
        合併三條時間序列為進度表。

        Returns:
            欄位 slot, conflicts, finished, valid_fraction 的 DataFrame，
            缺值以前一筆延續
        """
        frames = [
            pd.DataFrame(self.conflicts_series, columns=["slot", "conflicts"]),
            pd.DataFrame(self.finished_series, columns=["slot", "finished"]),
            pd.DataFrame(self.valid_fraction_series, columns=["slot", "valid_fraction"]),
        ]
        merged = None
        for frame in frames:
            frame = frame.astype("float64").drop_duplicates(subset="slot", keep="last").set_index("slot")
            merged = frame if merged is None else merged.join(frame, how="outer")
        if merged is None or merged.empty:
            return pd.DataFrame(columns=["slot", "conflicts", "finished", "valid_fraction"])
        merged = merged.sort_index().ffill().reset_index()
        return merged[["slot", "conflicts", "finished", "valid_fraction"]]


class MetricsCollector:
    """
    增量式衝突判定器。

    每次節點換色時只重算該節點與其鄰居的狀態；移動情境下每個時槽以
    set_topology 全部重算。
    """

    def __init__(self, topology: Topology, finish_mode: str, record: bool = True):
        if finish_mode not in (FINISH_VALID, FINISH_FLAG):
            raise ValueError(f"未知的完成判定方式: {finish_mode}")
        self.finish_mode = finish_mode
        self.record = record
        self.neighbors: List[List[int]] = []
        self.colors = np.full(0, -1, dtype=np.int64)
        self.finished = np.zeros(0, dtype=bool)
        self.conflicted = np.zeros(0, dtype=bool)
        self.delta = 0
        self.redraw_total = 0
        self.conflicts_series: List[Tuple[float, int]] = []
        self.finished_series: List[Tuple[float, int]] = []
        self.valid_fraction_series: List[Tuple[float, float]] = []
        self._pre_colored: Set[int] = set()
        self._window_start: Optional[float] = None
        self._conflict_entries: List[Tuple[int, float]] = []
        self.set_topology(topology, 0.0)

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @property
    def conflict_count(self) -> int:
        return int(self.conflicted.sum())

    @property
    def colored_count(self) -> int:
        return int((self.colors >= 0).sum())

    @property
    def valid_count(self) -> int:
        return self.colored_count - self.conflict_count

    @property
    def finished_count(self) -> int:
        if self.finish_mode == FINISH_VALID:
            return self.valid_count
        return int(self.finished.sum())

    def set_topology(self, topology: Topology, t: float) -> None:
        """換上新拓樸（移動或新節點加入後）並全部重算衝突"""
        grow = topology.n - len(self.colors)
        if grow > 0:
            self.colors = np.concatenate([self.colors, np.full(grow, -1, dtype=np.int64)])
            self.finished = np.concatenate([self.finished, np.zeros(grow, dtype=bool)])
            self.conflicted = np.concatenate([self.conflicted, np.zeros(grow, dtype=bool)])
        self.neighbors = topology.adjacency
        self.delta = topology.delta
        before = self.conflicted.copy()
        conflicted = np.zeros(self.n, dtype=bool)
        edges = topology.edge_array()
        if len(edges):
            a, b = edges[:, 0], edges[:, 1]
            same = (self.colors[a] == self.colors[b]) & (self.colors[a] >= 0)
            conflicted[a[same]] = True
            conflicted[b[same]] = True
        self.conflicted = conflicted
        for v in np.flatnonzero(self.conflicted & ~before):
            self._entered_conflict(int(v), t)
        self._changed(t)

    def _status(self, v: int) -> bool:
        c = self.colors[v]
        if c < 0:
            return False
        return any(self.colors[u] == c for u in self.neighbors[v])

    def _entered_conflict(self, v: int, t: float) -> None:
        if self._window_start is not None and v in self._pre_colored:
            self._conflict_entries.append((v, t))

    def _refresh(self, v: int, t: float) -> None:
        status = self._status(v)
        if status and not self.conflicted[v]:
            self._entered_conflict(v, t)
        self.conflicted[v] = status

    def on_color_change(self, node: int, new_color: Optional[int], t: float) -> None:
        """節點選了新顏色（None 表示清除）；重算自己與鄰居的衝突狀態"""
        self.colors[node] = -1 if new_color is None else int(new_color)
        self._refresh(node, t)
        for u in self.neighbors[node]:
            self._refresh(u, t)
        self._changed(t)

    def on_finished_change(self, node: int, finished: bool, t: float) -> None:
        self.finished[node] = finished
        self._changed(t)

    def on_redraw(self, node: int) -> None:
        self.redraw_total += 1

    def _append(self, series: list, t: float, value) -> None:
        if series and series[-1][1] == value:
            return
        if series and series[-1][0] == t:
            series[-1] = (t, value)
        else:
            series.append((t, value))

    def _changed(self, t: float) -> None:
        if not self.record:
            return
        self._append(self.conflicts_series, t, self.conflict_count)
        self._append(self.finished_series, t, self.finished_count)

    def sample(self, t: float) -> None:
        """固定間隔取樣（每 10 個時槽）"""
        if not self.record:
            return
        self.conflicts_series.append((t, self.conflict_count))
        self.finished_series.append((t, self.finished_count))
        fraction = self.valid_count / self.n if self.n else 1.0
        self.valid_fraction_series.append((t, fraction))

    def all_done(self) -> bool:
        if self.n == 0:
            return False
        return self.finished_count == self.n

    def full_recheck(self) -> Set[int]:
        """O(n²) 逐對重算，用於驗證增量計數"""
        colors = self.colors
        conflicted = set()
        for v in range(self.n):
            if colors[v] < 0:
                continue
            for u in self.neighbors[v]:
                if colors[u] == colors[v]:
                    conflicted.add(v)
                    conflicted.add(u)
        return conflicted

    def begin_disturbance_window(self, pre_colored: Iterable[int], t: float) -> None:
        self._pre_colored = set(pre_colored)
        self._window_start = t
        self._conflict_entries = []

    def count_disturbed(
        self,
        pre_colored: Optional[Set[int]] = None,
        window: Optional[Tuple[float, float]] = None,
    ) -> int:
        """
        統計在時間窗內至少進入一次衝突狀態的預先著色節點數。

        Args:
            pre_colored: 預先著色的節點集合（預設為晚醒節點加入時的既有節點）
            window: (開始, 結束) 時間，預設為整個觀察期

        Returns:
            受擾節點數
        """
        if self._window_start is None:
            return 0
        pre = self._pre_colored if pre_colored is None else set(pre_colored)
        lo, hi = window if window is not None else (self._window_start, math.inf)
        return len({v for v, t in self._conflict_entries if v in pre and lo <= t <= hi})

    def finalize(self, end_time: float, terminated: bool, runtime_slots: int, first_wake: float) -> RunMetrics:
        if self.record:
            self._append(self.conflicts_series, end_time, self.conflict_count)
            self._append(self.finished_series, end_time, self.finished_count)
        mismatch = self.full_recheck() != set(np.flatnonzero(self.conflicted).tolist())
        if mismatch:
            logger.warning("增量衝突計數與全量重算不一致")
        return RunMetrics(
            runtime_slots=runtime_slots,
            terminated=terminated,
            final_conflicts=self.conflict_count,
            redraw_total=self.redraw_total,
            disturbed_count=self.count_disturbed(),
            end_time=end_time,
            first_wake=first_wake,
            n_nodes=self.n,
            delta=self.delta,
            final_colors=tuple(int(c) for c in self.colors),
            conflicts_series=list(self.conflicts_series),
            finished_series=list(self.finished_series),
            valid_fraction_series=list(self.valid_fraction_series),
        )


def audit_coloring(topology: Topology, colors: Iterable[int]) -> Set[int]:
    """
    以 networkx 圖重新檢查著色，回傳所有處於衝突的節點。

    Args:
        topology: 鄰居拓樸
        colors: 每個節點的顏色（-1 表示未著色）
    """
    colors = list(colors)
    graph = topology.to_graph()
    conflicted = set()
    for u, v in graph.edges():
        if colors[u] >= 0 and colors[u] == colors[v]:
            conflicted.update((u, v))
    return conflicted


def is_independent(topology: Topology, members: Iterable[int]) -> bool:
    """members 在拓樸中是否兩兩不相鄰"""
    graph = topology.to_graph()
    return nx.is_empty(graph.subgraph(list(members)))
