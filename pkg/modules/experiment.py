"""
實驗執行模組
把實驗設定展開成參數格（cell），每格跑多次模擬，
以 worker pool 平行執行後依 (cell, run) 合併結果；另含本地廣播校正。
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modules import report_builder
from modules.comms import CommParams
from modules.deployment import DeploymentSpec, Strategy, build_topology, generate, load_or_generate
from modules.kernel import Kernel, KernelConfig, SyncMode
from modules.metrics import audit_coloring
from modules.mobility import MobilitySpec
from modules.protocols import CORRECTING_BASES, build_protocol, canonical_name
from modules.sinr import SinrParams

logger = logging.getLogger(__name__)

SCALE_DESK = "desk"
SCALE_PAPER = "paper"

RAND_VARIANTS = ("Rand4DColor", "Rand4DRespColor", "Rand4DFinalColor", "Rand1DColor")

# 移動實驗固定使用小規模部署
MOBILITY_SCALE = SCALE_DESK


class Scenario(str, Enum):
    RUN = "run"
    FACTOR_SWEEP = "factor_sweep"
    DURATION_PRIME_SWEEP = "duration_prime_sweep"
    RAND_VARIANTS = "rand_variants"
    INITIAL_COLOR_STUDY = "initial_color_study"
    COMPARISON = "comparison"
    MOBILITY = "mobility"
    WAKEUP = "wakeup"
    CALIBRATION = "calibration"
    PHASE_LENGTH = "phase_length"

    @classmethod
    def parse(cls, value: Union[str, "Scenario"]) -> "Scenario":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.replace("_", "") == key:
                return member
        aliases = {"runonce": cls.RUN, "lbcalibration": cls.CALIBRATION, "calibrate": cls.CALIBRATION}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"未知的實驗情境: {value}")


# 各情境未指定協定時的預設清單；None 表示取自 defaults
_SCENARIO_PROTOCOLS = {
    Scenario.RUN: ("Rand4DColor",),
    Scenario.FACTOR_SWEEP: ("CRRandColor", "MWColor", "YuColor"),
    Scenario.DURATION_PRIME_SWEEP: ("CRRCor", "MWCor", "YuCor"),
    Scenario.RAND_VARIANTS: RAND_VARIANTS,
    Scenario.INITIAL_COLOR_STUDY: ("ColorReduction", "CRRandColor"),
    Scenario.COMPARISON: None,
    Scenario.MOBILITY: ("Rand4DColor", "CRRCor", "MWCor", "YuCor"),
    Scenario.WAKEUP: None,
    Scenario.CALIBRATION: ("LBProbe",),
    Scenario.PHASE_LENGTH: ("Rand4DColor",),
}


def parse_distributions(values: Sequence[str]) -> Tuple[str, ...]:
    """部署策略名稱正規化；"all" 展開為全部七種"""
    result: List[str] = []
    for value in values:
        if str(value).strip().lower() == "all":
            names = [s.value for s in Strategy]
        else:
            names = [Strategy.parse(value).value]
        result.extend(name for name in names if name not in result)
    return tuple(result)


@dataclass(frozen=True)
class ExperimentSpec:
    """
    一個實驗情境的設定。未填的欄位（None 或空 tuple）在展開時由 defaults 補上。

    Args:
        scenario: 實驗情境
        name: 名稱，輸出子目錄用
        protocols: 協定名稱
        distributions: 部署策略（可含 "all"）
        scale: "desk"（n=250, 500x500 m）或 "paper"（n=1000, 1000x1000 m）
        runs: 每格的模擬次數
        master_seed: 主種子
    """
    scenario: Scenario
    name: str = ""
    protocols: Tuple[str, ...] = ()
    distributions: Tuple[str, ...] = ("Random",)
    scale: str = SCALE_DESK
    n: Optional[int] = None
    area: Optional[Tuple[float, float]] = None
    runs: Optional[int] = None
    master_seed: int = 0
    tx_const: Optional[float] = None
    duration: Optional[int] = None
    factor: Optional[float] = None
    duration_prime: Optional[int] = None
    redraw: Optional[str] = None
    factors: Tuple[float, ...] = ()
    duration_prime_fractions: Tuple[float, ...] = ()
    palette_factors: Tuple[float, ...] = ()
    speeds: Tuple[float, ...] = ()
    late_counts: Tuple[int, ...] = ()
    tx_const_grid: Tuple[float, ...] = ()
    mode: Optional[SyncMode] = None
    max_slots: Optional[int] = None
    positions_dir: Optional[str] = None
    progress: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        object.__setattr__(self, "name", self.name or self.scenario.value)
        object.__setattr__(self, "protocols", tuple(canonical_name(p) for p in self.protocols))
        object.__setattr__(self, "distributions", parse_distributions(self.distributions))
        if self.mode is not None:
            object.__setattr__(self, "mode", SyncMode(self.mode))
        if self.area is not None:
            object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))
        for name in ("factors", "duration_prime_fractions", "palette_factors", "speeds", "tx_const_grid"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "late_counts", tuple(int(v) for v in self.late_counts))

        if self.scale not in (SCALE_DESK, SCALE_PAPER):
            raise ValueError(f"scale 必須是 {SCALE_DESK} 或 {SCALE_PAPER}: {self.scale}")
        if not self.distributions:
            raise ValueError("至少需要一種部署策略")
        if self.runs is not None and self.runs < 1:
            raise ValueError(f"runs 必須至少為 1: {self.runs}")
        if self.n is not None and self.n < 1:
            raise ValueError(f"節點數必須至少為 1: {self.n}")
        if self.master_seed < 0:
            raise ValueError(f"master_seed 不可為負: {self.master_seed}")
        if self.max_slots is not None and self.max_slots < 1:
            raise ValueError(f"max_slots 必須至少為 1: {self.max_slots}")
        if any(f <= 0 for f in self.factors) or any(c <= 0 for c in self.palette_factors):
            raise ValueError("factor 與調色盤倍數必須為正")
        if any(not 0 < f <= 1 for f in self.duration_prime_fractions):
            raise ValueError(f"duration′ 比例必須介於 (0, 1]: {self.duration_prime_fractions}")
        if any(s < 0 for s in self.speeds):
            raise ValueError(f"速度不可為負: {self.speeds}")
        if any(k < 0 for k in self.late_counts):
            raise ValueError(f"晚醒節點數不可為負: {self.late_counts}")
        if any(not 0 < t <= 1 for t in self.tx_const_grid):
            raise ValueError(f"txConst 必須介於 (0, 1]: {self.tx_const_grid}")


@dataclass(frozen=True)
class Cell:
    """實驗中的一個參數組合；同一格的所有 run 只差在種子"""
    cell_id: int
    scenario: Scenario
    protocol: str
    deployment: DeploymentSpec
    tx_const: float
    duration: int
    sinr: SinrParams
    kernel: KernelConfig
    factor: Optional[float] = None
    duration_prime: Optional[int] = None
    palette_factor: Optional[float] = None
    redraw: Optional[str] = None
    speed: Optional[float] = None
    late: int = 0
    positions_dir: Optional[str] = None
    progress: bool = True

    @property
    def distribution(self) -> str:
        return self.deployment.strategy.value

    @property
    def label(self) -> str:
        parts = [self.protocol, self.distribution]
        if self.factor is not None:
            parts.append(f"factor={self.factor:g}")
        if self.duration_prime is not None:
            parts.append(f"d'={self.duration_prime}")
        if self.palette_factor is not None:
            parts.append(f"c={self.palette_factor:g}")
        if self.redraw is not None:
            parts.append(f"redraw={self.redraw}")
        if self.speed is not None:
            parts.append(f"speed={self.speed:g}")
        if self.late:
            parts.append(f"late={self.late}")
        if self.scenario is Scenario.CALIBRATION:
            parts.append(f"txConst={self.tx_const:g}")
        return "/".join(parts)

    def protocol_options(self) -> Dict[str, Any]:
        options: Dict[str, Any] = {"factor": self.factor, "duration_prime": self.duration_prime}
        if self.palette_factor is not None:
            options["palette_factor"] = self.palette_factor
        if self.redraw is not None:
            options["redraw"] = self.redraw
        if self.speed is not None:
            options["mobile"] = True
        return options


@dataclass(frozen=True)
class RunTask:
    cell: Cell
    run: int
    master_seed: int


@dataclass
class RunOutcome:
    row: Dict[str, Any]
    progress: Optional[pd.DataFrame] = None


@dataclass
class ExperimentResult:
    """一個實驗的輸出：逐次結果、彙總與進度曲線（鍵為 "<cell>-<run>"）"""
    spec: ExperimentSpec
    results: pd.DataFrame
    summary: pd.DataFrame
    progress: Dict[str, pd.DataFrame] = field(default_factory=dict)


@dataclass
class CalibrationResult:
    best_tx_const: float
    duration: int
    table: pd.DataFrame
    results: pd.DataFrame


def run_seeds(master_seed: int, run: int) -> Tuple[int, int, int]:
    """
    由主種子與 run 編號導出 (部署, 模擬核心, 晚醒節點座標) 三個種子。

    同一 run 編號在所有參數格共用同一份部署。
    """
    state = np.random.SeedSequence([int(master_seed), int(run)]).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def duration_from_fraction(fraction: float, duration: int) -> int:
    """duration′ = ⌊fraction·duration⌋，至少 1（Random: 1/32 -> 143）"""
    return max(1, int(math.floor(fraction * duration + 1e-9)))


def round_duration(average: float) -> int:
    """量到的平均本地廣播時間無條件進位到 100 的倍數；0 以 1 表示"""
    return max(1, int(math.ceil(average / 100.0 - 1e-12)) * 100)


def distribution_defaults(defaults: Mapping, distribution: str) -> Dict[str, Any]:
    table = defaults["DISTRIBUTIONS"]
    name = Strategy.parse(distribution).value
    if name not in table:
        raise ValueError(f"defaults 沒有部署策略 {name} 的參數")
    return dict(table[name])


def protocol_defaults(defaults: Mapping, protocol: str) -> Dict[str, Any]:
    return dict(defaults["PROTOCOLS"].get(canonical_name(protocol), {}))


def resolve_runs(spec: ExperimentSpec, defaults: Mapping) -> int:
    return spec.runs or int(defaults["SCALES"][spec.scale]["runs"])


def _sinr(defaults: Mapping) -> SinrParams:
    return SinrParams(**defaults["SINR"])


def _kernel(spec: ExperimentSpec, defaults: Mapping) -> KernelConfig:
    base = defaults["KERNEL"]
    return KernelConfig(
        mode=spec.mode or SyncMode(base.get("mode", SyncMode.ASYNC.value)),
        transmission_time=float(base.get("transmission_time", 0.999)),
        max_slots=int(spec.max_slots or base.get("max_slots", 200_000)),
        wake_window=float(base.get("wake_window", 10.0)),
        sample_every=int(base.get("sample_every", 10)),
    )


def deployment_spec(defaults: Mapping, distribution: str, n: int, area: Tuple[float, float]) -> DeploymentSpec:
    base = defaults["DEPLOYMENT"]
    return DeploymentSpec(
        strategy=Strategy.parse(distribution),
        n=int(n),
        area=tuple(area),
        clusters=int(base.get("clusters", 10)),
        mix_fraction=float(base.get("mix_fraction", 0.5)),
        cluster_sigma=float(base.get("cluster_sigma", 30.0)),
        perturbation=float(base.get("perturbation", 1.0)),
    )


def _grid(values: Tuple, fallback, what: str, scenario: Scenario) -> Tuple:
    grid = tuple(values) or tuple(fallback or ())
    if not grid:
        raise ValueError(f"情境 {scenario.value} 需要 {what}")
    return grid


def expand_cells(spec: ExperimentSpec, defaults: Mapping) -> List[Cell]:
    """
    把實驗設定展開成參數格。

    Args:
        spec: 實驗設定
        defaults: defaults.json 內容（或 Flask app.config）

    Returns:
        依 cell_id 排序的 Cell 清單

    Raises:
        ValueError: 情境需要的參數格點在設定與 defaults 中都沒有
    """
    scenario = spec.scenario
    sweeps = defaults.get("SWEEPS", {})
    scale = defaults["SCALES"][spec.scale]
    n = spec.n or int(scale["n"])
    area = spec.area or tuple(scale["area"])
    kernel = _kernel(spec, defaults)
    sinr = _sinr(defaults)

    protocols = spec.protocols or _SCENARIO_PROTOCOLS[scenario]
    if protocols is None:
        if scenario is Scenario.COMPARISON:
            protocols = tuple(sweeps.get("comparison", ()))
        else:
            protocols = tuple(defaults.get("WAKEUP", {}).get("protocols", ()))
    if not protocols:
        raise ValueError(f"情境 {scenario.value} 沒有指定協定")

    if scenario is Scenario.MOBILITY:
        mobility_scale = defaults["SCALES"][MOBILITY_SCALE]
        n = spec.n or int(mobility_scale["n"])
        area = spec.area or tuple(mobility_scale["area"])
        moves = defaults.get("MOBILITY", {})
        kernel = replace(
            kernel,
            mode=SyncMode.SYNC_LOCKSTEP,
            max_slots=int(spec.max_slots or moves.get("max_slots", 20_000)),
            stop_on_termination=False,
        )
    if scenario is Scenario.WAKEUP:
        n = spec.n or int(defaults["WAKEUP"]["base"][spec.scale])

    cells: List[Cell] = []

    def add(protocol: str, distribution: str, **overrides) -> None:
        protocol = canonical_name(protocol)
        dist = distribution_defaults(defaults, distribution)
        proto = protocol_defaults(defaults, protocol)
        tx_const = overrides.pop("tx_const", None) or spec.tx_const or float(dist["tx_const"])
        duration = overrides.pop("duration", None) or spec.duration or int(dist["duration"])
        duration_prime = spec.duration_prime
        if duration_prime is None and "duration_prime_fraction" in proto:
            duration_prime = duration_from_fraction(float(proto["duration_prime_fraction"]), duration)
        palette_factor = proto.get("init_palette_factor")
        values = {
            "factor": spec.factor if spec.factor is not None else proto.get("factor"),
            "duration_prime": duration_prime,
            "palette_factor": float(palette_factor) if palette_factor is not None else None,
            "redraw": spec.redraw or proto.get("redraw"),
        }
        values.update(overrides)
        cell_kernel = kernel
        speed = values.pop("speed", None)
        if speed is not None:
            moves = defaults.get("MOBILITY", {})
            mobility = MobilitySpec(
                mean_speed=float(speed),
                speed_variance=float(moves.get("speed_variance", 2.0)),
                mean_time=float(moves.get("mean_time", 100.0)),
                time_variance=float(moves.get("time_variance", 50.0)),
                area=area,
            )
            cell_kernel = replace(kernel, mobility=mobility)
        cells.append(Cell(
            cell_id=len(cells),
            scenario=scenario,
            protocol=protocol,
            deployment=deployment_spec(defaults, distribution, n, area),
            tx_const=float(tx_const),
            duration=int(duration),
            sinr=sinr,
            kernel=cell_kernel,
            speed=speed,
            positions_dir=spec.positions_dir,
            progress=spec.progress,
            **values,
        ))

    for distribution in spec.distributions:
        if scenario in (Scenario.RUN, Scenario.RAND_VARIANTS, Scenario.COMPARISON):
            for protocol in protocols:
                add(protocol, distribution)

        elif scenario is Scenario.FACTOR_SWEEP:
            for protocol in protocols:
                for factor in _grid(spec.factors, sweeps.get("factors"), "factors", scenario):
                    add(protocol, distribution, factor=factor)

        elif scenario is Scenario.PHASE_LENGTH:
            for protocol in protocols:
                for factor in _grid(spec.factors, sweeps.get("phase_factors"), "factors", scenario):
                    add(protocol, distribution, factor=factor, redraw="phase_end")

        elif scenario is Scenario.DURATION_PRIME_SWEEP:
            duration = spec.duration or int(distribution_defaults(defaults, distribution)["duration"])
            fractions = _grid(spec.duration_prime_fractions, sweeps.get("duration_prime_fractions"),
                              "duration_prime_fractions", scenario)
            for protocol in protocols:
                protocol = CORRECTING_BASES.get(canonical_name(protocol), canonical_name(protocol))
                for fraction in fractions:
                    add(protocol, distribution, duration_prime=duration_from_fraction(fraction, duration))

        elif scenario is Scenario.INITIAL_COLOR_STUDY:
            for protocol in protocols:
                for c in _grid(spec.palette_factors, sweeps.get("palette_factors"), "palette_factors", scenario):
                    add(protocol, distribution, palette_factor=c)

        elif scenario is Scenario.MOBILITY:
            speeds = _grid(spec.speeds, defaults.get("MOBILITY", {}).get("speeds"), "speeds", scenario)
            for protocol in protocols:
                for speed in speeds:
                    add(protocol, distribution, speed=speed)

        elif scenario is Scenario.WAKEUP:
            lates = _grid(spec.late_counts, defaults["WAKEUP"]["late_counts"][spec.scale], "late_counts", scenario)
            for protocol in protocols:
                for late in lates:
                    add(protocol, distribution, late=late)

        elif scenario is Scenario.CALIBRATION:
            grid = _grid(spec.tx_const_grid, defaults.get("CALIBRATION", {}).get("tx_const_grid"),
                         "tx_const_grid", scenario)
            for tx_const in grid:
                add("LBProbe", distribution, tx_const=tx_const, duration=1)

    return cells


def execute_run(task: RunTask) -> RunOutcome:
    """
    執行一格中的一次模擬（worker 進程的進入點）。

    Returns:
        RunOutcome：results.csv 的一列，以及（需要時）進度曲線
    """
    cell = task.cell
    deploy_seed, kernel_seed, late_seed = run_seeds(task.master_seed, task.run)
    deployment = replace(cell.deployment, seed=deploy_seed)
    positions = load_or_generate(deployment, cell.positions_dir)
    topology = build_topology(positions, cell.sinr)

    late_positions = None
    if cell.late:
        late_positions = generate(replace(deployment, n=cell.late, seed=late_seed))

    params = CommParams(tx_const=cell.tx_const, duration=cell.duration, delta=topology.delta)
    protocol = build_protocol(cell.protocol, **cell.protocol_options())
    config = replace(cell.kernel, master_seed=kernel_seed)
    kernel = Kernel(topology, protocol, config, params, cell.sinr, late_positions)
    metrics = kernel.run()

    audited = audit_coloring(kernel.topology, metrics.final_colors)
    if len(audited) != metrics.final_conflicts:
        logger.warning(
            f"{cell.label} run {task.run}: 圖檢查衝突數 {len(audited)} 與增量計數 {metrics.final_conflicts} 不一致"
        )

    row = {
        "cell": cell.cell_id,
        "label": cell.label,
        "scenario": cell.scenario.value,
        "protocol": cell.protocol,
        "distribution": cell.distribution,
        "n": cell.deployment.n,
        "n_nodes": metrics.n_nodes,
        "run": task.run,
        "delta": topology.delta,
        "tx_const": cell.tx_const,
        "duration": cell.duration,
        "factor": cell.factor,
        "duration_prime": cell.duration_prime,
        "palette_factor": cell.palette_factor,
        "redraw": cell.redraw,
        "speed": cell.speed,
        "late": cell.late,
        "runtime_slots": metrics.runtime_slots,
        "terminated": metrics.terminated,
        "final_conflicts": metrics.final_conflicts,
        "redraw_total": metrics.redraw_total,
        "disturbed_count": metrics.disturbed_count,
        "valid_fraction": metrics.valid_fraction_mean(),
        "max_color": metrics.max_color,
        "audit_conflicts": len(audited),
        "lb_runtime": metrics.end_time - metrics.first_wake if cell.scenario is Scenario.CALIBRATION else None,
    }
    logger.info(f"{cell.label} run {task.run}: {metrics.runtime_slots} 時槽, 衝突 {metrics.final_conflicts}")
    progress = metrics.progress_frame() if cell.progress else None
    return RunOutcome(row=row, progress=progress)


def run_tasks(tasks: Sequence[RunTask], workers: int = 1) -> List[RunOutcome]:
    """依序或以進程池執行；回傳順序與 tasks 相同"""
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(execute_run, tasks))
    return [execute_run(task) for task in tasks]


def run_experiment(spec: ExperimentSpec, defaults: Mapping, workers: int = 1) -> ExperimentResult:
    """
    執行整個實驗。

    Args:
        spec: 實驗設定
        defaults: defaults.json 內容（或 Flask app.config）
        workers: 平行執行的進程數

    Returns:
        ExperimentResult；相同設定與主種子得到相同的表格
    """
    cells = expand_cells(spec, defaults)
    runs = resolve_runs(spec, defaults)
    tasks = [RunTask(cell, run, spec.master_seed) for cell in cells for run in range(runs)]
    logger.info(f"實驗 {spec.name} ({spec.scenario.value}): {len(cells)} 格 x {runs} 次, workers={workers}")

    outcomes = run_tasks(tasks, workers)
    results = report_builder.build_results([o.row for o in outcomes])
    summary = report_builder.summarize(results)
    progress = {
        report_builder.run_key(o.row["cell"], o.row["run"]): o.progress
        for o in outcomes if o.progress is not None
    }
    logger.info(f"實驗 {spec.name} 完成")
    return ExperimentResult(spec=spec, results=results, summary=summary, progress=progress)


def calibration_from_results(results: pd.DataFrame) -> CalibrationResult:
    """
    由 LBProbe 的逐次結果挑出平均本地廣播時間最短的 txConst。

    Raises:
        ValueError: 沒有任何完成的校正模擬
    """
    finished = results[results["terminated"].astype(bool)]
    if finished.empty:
        raise ValueError("沒有任何校正模擬在時限內完成")
    table = (
        finished.groupby(["distribution", "tx_const"], sort=True)["lb_runtime"]
        .agg(["mean", "std", "size"])
        .reset_index()
        .rename(columns={"mean": "lb_runtime_mean", "std": "lb_runtime_std", "size": "runs"})
    )
    best = table.loc[table["lb_runtime_mean"].idxmin()]
    duration = round_duration(float(best["lb_runtime_mean"]))
    table["duration"] = [round_duration(v) for v in table["lb_runtime_mean"]]
    return CalibrationResult(
        best_tx_const=float(best["tx_const"]),
        duration=duration,
        table=table,
        results=results,
    )


def calibrate_lb(
    deployment: DeploymentSpec,
    tx_const_grid: Sequence[float],
    runs: int = 1,
    master_seed: int = 0,
    sinr: Optional[SinrParams] = None,
    kernel: Optional[KernelConfig] = None,
    workers: int = 1,
) -> CalibrationResult:
    """
    對每個 txConst 量測所有節點的本地廣播都送達全部鄰居所需的時槽數。

    部署的策略、節點數與區域取自 deployment；各 run 的部署種子與實驗相同，
    由 master_seed 導出。

    Returns:
        CalibrationResult：最佳 txConst 與無條件進位到 100 的 duration
    """
    if not tx_const_grid:
        raise ValueError("txConst 格點不可為空")
    if runs < 1:
        raise ValueError(f"runs 必須至少為 1: {runs}")
    sinr = sinr or SinrParams()
    kernel = replace(kernel or KernelConfig(), record_metrics=False)
    cells = [
        Cell(cell_id=i, scenario=Scenario.CALIBRATION, protocol="LBProbe", deployment=deployment,
             tx_const=float(t), duration=1, sinr=sinr, kernel=kernel, progress=False)
        for i, t in enumerate(tx_const_grid)
    ]
    tasks = [RunTask(cell, run, master_seed) for cell in cells for run in range(runs)]
    results = report_builder.build_results([o.row for o in run_tasks(tasks, workers)])
    calibration = calibration_from_results(results)
    logger.info(
        f"{deployment.strategy.value} 校正: txConst={calibration.best_tx_const:g}, "
        f"duration={calibration.duration}"
    )
    return calibration
