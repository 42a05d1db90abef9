from flask import Blueprint, current_app
import click
import sys
import os
from dataclasses import replace
from pathlib import Path

import pandas as pd

# 添加父目錄到路徑
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules import report_builder
from modules.deployment import build_topology, generate, position_file_name, write_positions
from modules.experiment import (
    SCALE_DESK, SCALE_PAPER, ExperimentSpec, Scenario, calibration_from_results,
    deployment_spec, parse_distributions, run_experiment, run_seeds,
)
from modules.sinr import SinrParams
from routes import apply_overrides, cli_errors, experiment_options, specs_from_config

deployment_bp = Blueprint('deployment', __name__, cli_group=None)


@deployment_bp.cli.command('gen-positions')
@click.option('--distribution', '-d', 'distributions', multiple=True, default=('Random',), show_default=True,
              help='部署策略，可重複指定，all 表示全部')
@click.option('--n', type=int, default=None, help='節點數（預設依規模）')
@click.option('--seed', type=int, default=0, show_default=True, help='主種子')
@click.option('--runs', type=int, default=None, help='每種策略產生的部署數')
@click.option('--out', type=click.Path(file_okay=False), default='positions', show_default=True)
@click.option('--paper-scale', is_flag=True, default=False)
@cli_errors
def gen_positions(distributions, n, seed, runs, out, paper_scale):
    """
    預先產生部署位置檔。

    第 k 個檔案使用第 k 次模擬的部署種子，實驗以 positions_dir 指向
    輸出目錄時會直接讀取這些檔案。
    """
    config = current_app.config
    scale = config['SCALES'][SCALE_PAPER if paper_scale else SCALE_DESK]
    n = n or int(scale['n'])
    runs = runs or int(scale['runs'])
    sinr = SinrParams(**config['SINR'])

    count = 0
    for distribution in parse_distributions(distributions):
        for run in range(runs):
            spec = deployment_spec(config, distribution, n, tuple(scale['area']))
            spec = replace(spec, seed=run_seeds(seed, run)[0])
            positions = generate(spec)
            write_positions(Path(out) / position_file_name(spec), positions)
            if run == 0:
                topology = build_topology(positions, sinr)
                click.echo(f"{distribution}: n={n}, Δ={topology.delta}, 平均度數={topology.mean_degree():.1f}")
            count += 1
    click.echo(f"已寫出 {count} 個位置檔到 {out}")


@deployment_bp.cli.command('calibrate')
@experiment_options
@click.option('--distribution', '-d', 'distributions', multiple=True, default=('Random',), show_default=True)
@click.option('--tx-const', 'tx_consts', type=float, multiple=True, help='txConst 格點，可重複指定')
@click.option('--n', type=int, default=None)
@cli_errors
def calibrate(config_path, seed, runs, out, paper_scale, workers, distributions, tx_consts, n):
    """量測各 txConst 的本地廣播時間，挑出最佳值與對應的 duration"""
    config = current_app.config
    if config_path:
        specs = specs_from_config(config_path, [Scenario.CALIBRATION])
    else:
        specs = [ExperimentSpec(scenario=Scenario.CALIBRATION, distributions=distributions,
                                tx_const_grid=tx_consts, n=n, progress=False)]

    workers = workers or int(config.get('WORKERS', 1))
    for spec in specs:
        spec = apply_overrides(spec, seed, runs, paper_scale)
        target = Path(out) / spec.name if len(specs) > 1 else Path(out)
        result = run_experiment(spec, config, workers)
        report_builder.write_outputs(target, result.results, result.summary, result.progress)

        tables = []
        for distribution, part in result.results.groupby('distribution', sort=False):
            calibration = calibration_from_results(part)
            table = calibration.table.copy()
            table['best'] = table['tx_const'] == calibration.best_tx_const
            tables.append(table)
            click.echo(f"{distribution}: txConst={calibration.best_tx_const:g}, duration={calibration.duration}")
        pd.concat(tables, ignore_index=True).to_csv(target / 'calibration.csv', index=False)
