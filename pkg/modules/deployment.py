"""
節點部署模組
依七種部署策略產生節點座標，建立廣播範圍下的鄰居拓樸並計算最大度數 Δ，
另提供位置檔的讀寫。
"""

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import networkx as nx
import numpy as np

from modules.sinr import SinrParams, broadcast_range

logger = logging.getLogger(__name__)

# 位置檔寫出的小數位數（微米解析度）
POSITION_DECIMALS = 6


class PositionFileError(ValueError):
    """位置檔格式錯誤，訊息包含行號"""


class Strategy(str, Enum):
    RANDOM = "Random"
    GRID = "Grid"
    PERTURBED_GRID = "PerturbedGrid"
    CLUSTER = "Cluster"
    CLUSTER_RANDOM = "ClusterRandom"
    CLUSTER_GRID = "ClusterGrid"
    CLUSTER_PERTURBED_GRID = "ClusterPerturbedGrid"

    @classmethod
    def parse(cls, value: Union[str, "Strategy"]) -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").replace("&", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        aliases = {"r": cls.RANDOM, "g": cls.GRID, "pg": cls.PERTURBED_GRID, "c": cls.CLUSTER,
                   "cr": cls.CLUSTER_RANDOM, "cg": cls.CLUSTER_GRID, "cpg": cls.CLUSTER_PERTURBED_GRID}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"未知的部署策略: {value}")


# 混合策略中非叢集部分所使用的模型
_MIXED_BASE = {
    Strategy.CLUSTER_RANDOM: Strategy.RANDOM,
    Strategy.CLUSTER_GRID: Strategy.GRID,
    Strategy.CLUSTER_PERTURBED_GRID: Strategy.PERTURBED_GRID,
}


@dataclass(frozen=True)
class DeploymentSpec:
    """部署參數"""
    strategy: Strategy
    n: int
    area: Tuple[float, float] = (1000.0, 1000.0)
    clusters: int = 10
    mix_fraction: float = 0.5
    seed: int = 0
    cluster_sigma: float = 30.0
    perturbation: float = 1.0  # 擾動正方形的邊長（公尺）

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))
        if self.n < 1:
            raise ValueError(f"節點數必須至少為 1: {self.n}")
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise ValueError(f"部署區域必須為正: {self.area}")
        if self.clusters < 1:
            raise ValueError(f"叢集數必須至少為 1: {self.clusters}")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ValueError(f"mix_fraction 必須介於 0 與 1 之間: {self.mix_fraction}")
        if self.cluster_sigma <= 0:
            raise ValueError(f"cluster_sigma 必須為正: {self.cluster_sigma}")
        if self.perturbation < 0:
            raise ValueError(f"perturbation 不可為負: {self.perturbation}")


@dataclass
class Topology:
    """鄰居拓樸：u 與 v 相鄰若且唯若距離不超過廣播範圍"""
    positions: np.ndarray
    adjacency: List[List[int]]
    delta: int
    radius: float
    edges: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.adjacency)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def mean_degree(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.mean([len(nbrs) for nbrs in self.adjacency]))

    def edge_array(self) -> np.ndarray:
        """無向邊陣列，形狀 (m, 2)，每條邊 u < v"""
        if self.edges is None:
            pairs = [(v, u) for v, nbrs in enumerate(self.adjacency) for u in nbrs if u > v]
            self.edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        return self.edges

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        for v, nbrs in enumerate(self.adjacency):
            graph.add_edges_from((v, u) for u in nbrs if u > v)
        return graph


def _grid(n: int, area: Tuple[float, float]) -> np.ndarray:
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    pitch_x = area[0] / cols
    pitch_y = area[1] / rows
    idx = np.arange(n)
    # 四周保留半個間距，讓格點置中
    x = (idx % cols + 0.5) * pitch_x
    y = (idx // cols + 0.5) * pitch_y
    return np.column_stack([x, y])


def _inside(positions: np.ndarray, area: Tuple[float, float]) -> np.ndarray:
    return (
        (positions[:, 0] >= 0.0) & (positions[:, 0] <= area[0])
        & (positions[:, 1] >= 0.0) & (positions[:, 1] <= area[1])
    )


def _place(strategy: Strategy, n: int, spec: DeploymentSpec, rng: np.random.Generator) -> np.ndarray:
    area = spec.area
    if n == 0:
        return np.empty((0, 2))

    if strategy is Strategy.RANDOM:
        return rng.uniform((0.0, 0.0), area, size=(n, 2))

    if strategy is Strategy.GRID:
        return _grid(n, area)

    if strategy is Strategy.PERTURBED_GRID:
        half = spec.perturbation / 2.0
        offsets = rng.uniform(-half, half, size=(n, 2))
        return np.clip(_grid(n, area) + offsets, (0.0, 0.0), area)

    if strategy is Strategy.CLUSTER:
        centers = rng.uniform((0.0, 0.0), area, size=(spec.clusters, 2))
        assignment = np.arange(n) % spec.clusters
        positions = centers[assignment] + rng.normal(0.0, spec.cluster_sigma, size=(n, 2))
        outside = ~_inside(positions, area)
        # 超出區域者重新抽樣
        while outside.any():
            count = int(outside.sum())
            positions[outside] = centers[assignment[outside]] + rng.normal(
                0.0, spec.cluster_sigma, size=(count, 2)
            )
            outside = ~_inside(positions, area)
        return positions

    base = _MIXED_BASE[strategy]
    clustered = int(math.floor(spec.mix_fraction * n))
    return np.vstack([
        _place(Strategy.CLUSTER, clustered, spec, rng),
        _place(base, n - clustered, spec, rng),
    ])


def generate(spec: DeploymentSpec) -> np.ndarray:
    """
    依部署策略產生 n 個節點座標。

    Args:
        spec: 部署參數（相同 spec 與 seed 必定得到相同座標）

    Returns:
        形狀為 (n, 2) 的座標陣列，座標四捨五入到微米
    """
    rng = np.random.default_rng(spec.seed)
    positions = _place(spec.strategy, spec.n, spec, rng)
    positions = np.clip(np.round(positions, POSITION_DECIMALS), (0.0, 0.0), spec.area)
    logger.debug(f"產生 {spec.strategy.value} 部署: n={spec.n}, seed={spec.seed}")
    return positions


def build_topology(positions: np.ndarray, p: SinrParams) -> Topology:
    """
    依廣播範圍建立鄰居拓樸。

    Args:
        positions: (n, 2) 座標陣列
        p: SINR 參數（決定廣播範圍）

    Returns:
        Topology，鄰接串列依節點編號排序，delta 為最大度數
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    radius = broadcast_range(p)
    n = len(positions)
    if n == 0:
        return Topology(positions=positions, adjacency=[], delta=0, radius=radius)

    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    adj = dist <= radius
    np.fill_diagonal(adj, False)

    adjacency = [np.flatnonzero(row).tolist() for row in adj]
    delta = int(adj.sum(axis=1).max())
    edges = np.argwhere(np.triu(adj, 1))
    return Topology(positions=positions, adjacency=adjacency, delta=delta, radius=radius, edges=edges)


def write_positions(path: Union[str, Path], positions: np.ndarray) -> None:
    """寫出位置檔，每行 `id x y`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# id x y\n")
        for i, (x, y) in enumerate(positions):
            f.write(f"{i} {x:.{POSITION_DECIMALS}f} {y:.{POSITION_DECIMALS}f}\n")


def read_positions(path: Union[str, Path]) -> np.ndarray:
    """
    讀取位置檔。

    Args:
        path: 位置檔路徑，`#` 之後為註解

    Returns:
        依節點編號排序的 (n, 2) 座標陣列；空檔案回傳空陣列

    Raises:
        FileNotFoundError: 檔案不存在
        PositionFileError: 格式錯誤（訊息含行號）
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到位置檔: {path}")

    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = re.split(r"\s+", line)
            if len(parts) != 3:
                raise PositionFileError(f"{path} 第 {line_no} 行欄位數錯誤: {raw.rstrip()}")
            try:
                node_id = int(parts[0])
                x = float(parts[1])
                y = float(parts[2])
            except ValueError:
                raise PositionFileError(f"{path} 第 {line_no} 行包含非數值欄位: {raw.rstrip()}")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise PositionFileError(f"{path} 第 {line_no} 行座標不是有限值: {raw.rstrip()}")
            if node_id in entries:
                raise PositionFileError(f"{path} 第 {line_no} 行節點編號重複: {node_id}")
            entries[node_id] = (x, y)

    if not entries:
        return np.empty((0, 2))
    if sorted(entries) != list(range(len(entries))):
        raise PositionFileError(f"{path} 節點編號必須為 0..{len(entries) - 1}")
    return np.array([entries[i] for i in range(len(entries))], dtype=float)


def position_file_name(spec: DeploymentSpec) -> str:
    """預先計算部署檔的檔名"""
    width, height = spec.area
    return f"{spec.strategy.value}_n{spec.n}_{int(width)}x{int(height)}_s{spec.seed}.txt"


def load_or_generate(spec: DeploymentSpec, positions_dir: Optional[Union[str, Path]] = None) -> np.ndarray:
    """有預先計算的位置檔就讀取，否則直接產生"""
    if positions_dir:
        candidate = Path(positions_dir) / position_file_name(spec)
        if candidate.exists():
            positions = read_positions(candidate)
            if len(positions) != spec.n:
                raise PositionFileError(f"{candidate} 節點數 {len(positions)} 與設定 {spec.n} 不符")
            return positions
    return generate(spec)
