"""
CLI 指令共用的選項與執行流程
各 Blueprint 以 cli_group=None 把指令直接掛在應用程式的 CLI 上。
"""

import functools
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable, List, Optional

import click
from flask import current_app

from modules import report_builder
from modules.data_loader import load_experiment_config
from modules.experiment import SCALE_PAPER, ExperimentResult, ExperimentSpec, Scenario, run_experiment

logger = logging.getLogger(__name__)


def cli_errors(f):
    """把設定錯誤轉成一行錯誤訊息與結束碼 1"""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ValueError, FileNotFoundError) as e:
            raise click.ClickException(str(e))
    return wrapper


def experiment_options(f):
    """--config、--seed、--runs、--out、--paper-scale、--workers"""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="實驗設定檔（[section] 加 key = value）"),
        click.option("--seed", type=int, default=None, help="主種子"),
        click.option("--runs", type=int, default=None, help="每個參數格的模擬次數"),
        click.option("--out", type=click.Path(file_okay=False), default="results", show_default=True,
                     help="輸出目錄"),
        click.option("--paper-scale", is_flag=True, default=False, help="使用 n=1000、100 次的完整規模"),
        click.option("--workers", type=int, default=None, help="平行執行的進程數"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def apply_overrides(spec: ExperimentSpec, seed: Optional[int], runs: Optional[int], paper_scale: bool) -> ExperimentSpec:
    """CLI 旗標覆寫設定檔與預設值"""
    changes = {}
    if seed is not None:
        changes["master_seed"] = seed
    if runs is not None:
        changes["runs"] = runs
    if paper_scale:
        changes["scale"] = SCALE_PAPER
    return replace(spec, **changes) if changes else spec


def specs_from_config(path: str, allowed: Iterable[Scenario]) -> List[ExperimentSpec]:
    """
    讀取設定檔中屬於本指令的實驗區段。

    Raises:
        ValueError: 檔案中沒有本指令可執行的情境
    """
    allowed = set(allowed)
    specs = [spec for spec in load_experiment_config(path) if spec.scenario in allowed]
    if not specs:
        names = ", ".join(sorted(s.value for s in allowed))
        raise ValueError(f"{path} 沒有可執行的情境（本指令接受: {names}）")
    return specs


def execute_specs(
    specs: List[ExperimentSpec],
    out: str,
    seed: Optional[int],
    runs: Optional[int],
    paper_scale: bool,
    workers: Optional[int],
) -> List[ExperimentResult]:
    """
    依序執行多個實驗並寫出 CSV。多於一個實驗時各自寫到 out/<name>/。
    """
    config = current_app.config
    workers = workers or int(config.get("WORKERS", 1))
    if workers < 1:
        raise ValueError(f"workers 必須至少為 1: {workers}")

    results = []
    for spec in specs:
        spec = apply_overrides(spec, seed, runs, paper_scale)
        target = Path(out) / spec.name if len(specs) > 1 else Path(out)
        result = run_experiment(spec, config, workers)
        report_builder.write_outputs(target, result.results, result.summary, result.progress)
        click.echo(f"[{spec.name}] 輸出目錄: {target}")
        click.echo(report_builder.summary_table(result.summary))
        results.append(result)
    return results
