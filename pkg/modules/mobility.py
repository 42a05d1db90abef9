"""
移動模型模組
Random Direction：節點交替移動與等待，移動與等待時間、速度皆取自常態分布，
撞到邊界時反射。只在同步模式下每個時槽推進一次。
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

# 與協定、喚醒時間分開的亂數流標記
MOBILITY_STREAM = 1


@dataclass(frozen=True)
class MobilitySpec:
    """移動參數；變異數依字面解讀，標準差取其平方根"""
    mean_speed: float = 1.0
    speed_variance: float = 2.0
    mean_time: float = 100.0
    time_variance: float = 50.0
    area: Tuple[float, float] = (500.0, 500.0)

    def __post_init__(self):
        object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))
        if self.mean_speed < 0:
            raise ValueError(f"平均速度不可為負: {self.mean_speed}")
        if self.speed_variance < 0 or self.time_variance < 0:
            raise ValueError("變異數不可為負")
        if self.mean_time <= 0:
            raise ValueError(f"平均時間必須為正: {self.mean_time}")
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise ValueError(f"移動區域必須為正: {self.area}")

    @property
    def static(self) -> bool:
        return self.mean_speed == 0.0


class RandomDirectionMobility:
    """
    每個節點各自持有亂數流，只在移動/等待切換時抽樣。

    Args:
        spec: 移動參數
        n: 節點數
        master_seed: 主種子
    """

    def __init__(self, spec: MobilitySpec, n: int, master_seed: int):
        self.spec = spec
        self.master_seed = master_seed
        self.rngs = []
        self.moving = np.zeros(0, dtype=bool)
        self.remaining = np.zeros(0, dtype=np.int64)
        self.speed = np.zeros(0)
        self.direction = np.zeros((0, 2))
        self.add_nodes(n)

    def add_nodes(self, count: int) -> None:
        start = len(self.rngs)
        for i in range(start, start + count):
            self.rngs.append(np.random.default_rng([self.master_seed, i, MOBILITY_STREAM]))
        self.moving = np.concatenate([self.moving, np.zeros(count, dtype=bool)])
        self.remaining = np.concatenate([self.remaining, np.zeros(count, dtype=np.int64)])
        self.speed = np.concatenate([self.speed, np.zeros(count)])
        self.direction = np.vstack([self.direction, np.zeros((count, 2))])
        # 一開始都處於移動階段
        for i in range(start, start + count):
            self._begin_move(i)

    def _sample_time(self, rng: np.random.Generator) -> int:
        value = rng.normal(self.spec.mean_time, math.sqrt(self.spec.time_variance))
        return max(1, int(round(value)))

    def _begin_move(self, i: int) -> None:
        rng = self.rngs[i]
        self.moving[i] = True
        self.remaining[i] = self._sample_time(rng)
        if self.spec.static:
            self.speed[i] = 0.0
        else:
            self.speed[i] = max(0.0, rng.normal(self.spec.mean_speed, math.sqrt(self.spec.speed_variance)))
        angle = rng.uniform(0.0, 2.0 * math.pi)
        self.direction[i] = (math.cos(angle), math.sin(angle))

    def _begin_wait(self, i: int) -> None:
        self.moving[i] = False
        self.remaining[i] = self._sample_time(self.rngs[i])

    def step_node(self, i: int, position: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """單一節點前進 dt 個時槽，回傳新位置"""
        new = np.array(position, dtype=float)
        if self.moving[i] and self.speed[i] > 0.0:
            new = new + self.speed[i] * dt * self.direction[i]
            for axis in (0, 1):
                limit = self.spec.area[axis]
                while new[axis] < 0.0 or new[axis] > limit:
                    if new[axis] < 0.0:
                        new[axis] = -new[axis]
                    else:
                        new[axis] = 2.0 * limit - new[axis]
                    self.direction[i, axis] = -self.direction[i, axis]
        self.remaining[i] -= 1
        if self.remaining[i] <= 0:
            if self.moving[i]:
                self._begin_wait(i)
            else:
                self._begin_move(i)
        return new

    def step(self, positions: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """所有節點前進一個時槽（與逐一呼叫 step_node 結果相同）"""
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        velocity = np.where(self.moving, self.speed, 0.0)[:, None] * dt
        new = positions + velocity * self.direction
        for axis in (0, 1):
            limit = self.spec.area[axis]
            while True:
                low = new[:, axis] < 0.0
                high = new[:, axis] > limit
                if not (low | high).any():
                    break
                new[low, axis] = -new[low, axis]
                new[high, axis] = 2.0 * limit - new[high, axis]
                self.direction[low | high, axis] *= -1.0
        self.remaining -= 1
        for i in np.flatnonzero(self.remaining <= 0):
            if self.moving[i]:
                self._begin_wait(int(i))
            else:
                self._begin_move(int(i))
        return new
