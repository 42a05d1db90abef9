"""
報表產生模組
把逐次模擬結果整理成 results.csv、依參數格彙總平均與標準差成 summary.csv，
並寫出每次模擬的進度曲線 progress_<cell>-<run>.csv。
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Union

import pandas as pd

logger = logging.getLogger(__name__)

# results.csv 欄位；各情境共用，不適用的欄位留空
RESULT_COLUMNS = [
    "cell", "label", "scenario", "protocol", "distribution", "n", "n_nodes", "run", "delta",
    "tx_const", "duration", "factor", "duration_prime", "palette_factor", "redraw", "speed", "late",
    "runtime_slots", "terminated", "final_conflicts", "redraw_total", "disturbed_count",
    "valid_fraction", "max_color", "audit_conflicts", "lb_runtime",
]

# 描述參數格的欄位（同一格內都相同）
CELL_COLUMNS = [
    "label", "scenario", "protocol", "distribution", "n", "tx_const", "duration",
    "factor", "duration_prime", "palette_factor", "redraw", "speed", "late",
]

METRIC_COLUMNS = [
    "runtime_slots", "final_conflicts", "redraw_total", "disturbed_count",
    "valid_fraction", "max_color", "delta", "lb_runtime",
]

SUMMARY_COLUMNS = (
    ["cell"] + CELL_COLUMNS + ["runs", "runs_terminated"]
    + [f"{m}_{s}" for m in METRIC_COLUMNS for s in ("mean", "std")]
)


def run_key(cell: int, run: int) -> str:
    return f"{int(cell):03d}-{int(run):03d}"


def build_results(rows: Iterable[Mapping]) -> pd.DataFrame:
    """
    逐次結果表。

    Args:
        rows: execute_run 產生的列

    Returns:
        欄位固定為 RESULT_COLUMNS、依 (cell, run) 排序的 DataFrame
    """
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return pd.DataFrame(columns=RESULT_COLUMNS)
    frame = frame.reindex(columns=RESULT_COLUMNS)
    frame["terminated"] = frame["terminated"].astype(bool)
    return frame.sort_values(["cell", "run"], kind="mergesort").reset_index(drop=True)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """
    依參數格彙總。未在時限內結束的模擬不列入平均，只計入 runs。

    Returns:
        欄位為 SUMMARY_COLUMNS 的 DataFrame；平均值可由 results 直接重算
    """
    if results.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)

    terminated = results["terminated"].astype(bool)
    excluded = int((~terminated).sum())
    if excluded:
        logger.warning(f"{excluded} 次模擬未在時限內結束，不列入平均")

    grouped = results.groupby("cell", sort=True)
    cells = grouped[CELL_COLUMNS].first()
    counts = pd.DataFrame({
        "runs": grouped["run"].size(),
        "runs_terminated": grouped["terminated"].sum().astype(int),
    })
    finished = results[terminated]
    metrics = finished[["cell"] + METRIC_COLUMNS].copy()
    metrics[METRIC_COLUMNS] = metrics[METRIC_COLUMNS].apply(pd.to_numeric, errors="coerce")
    stats = metrics.groupby("cell", sort=True)[METRIC_COLUMNS].agg(["mean", "std"])
    stats.columns = [f"{metric}_{stat}" for metric, stat in stats.columns]

    summary = cells.join(counts).join(stats).reset_index()
    return summary.reindex(columns=SUMMARY_COLUMNS)


def summary_table(summary: pd.DataFrame, columns: Optional[List[str]] = None) -> str:
    """終端機顯示用的精簡彙總表"""
    if summary.empty:
        return "(沒有結果)"
    columns = columns or ["label", "runs_terminated", "runtime_slots_mean", "final_conflicts_mean"]
    view = summary[[c for c in columns if c in summary.columns]]
    return view.to_string(index=False, float_format=lambda v: f"{v:.2f}")


def write_outputs(
    out_dir: Union[str, Path],
    results: pd.DataFrame,
    summary: pd.DataFrame,
    progress: Optional[Dict[str, pd.DataFrame]] = None,
) -> Dict[str, Path]:
    """
    寫出 CSV 檔案。內容不含任何時鐘資訊，同一主種子重跑得到相同的位元組。

    Returns:
        檔名到路徑的對照
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}

    path = out / "results.csv"
    results.to_csv(path, index=False)
    written[path.name] = path

    path = out / "summary.csv"
    summary.to_csv(path, index=False)
    written[path.name] = path

    for key in sorted(progress or {}):
        path = out / f"progress_{key}.csv"
        progress[key].to_csv(path, index=False)
        written[path.name] = path

    logger.info(f"已寫出 {len(written)} 個檔案到 {out}")
    return written
