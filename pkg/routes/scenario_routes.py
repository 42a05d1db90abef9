from flask import Blueprint
import click
import sys
import os

# 添加父目錄到路徑
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.experiment import ExperimentSpec, Scenario
from routes import cli_errors, execute_specs, experiment_options, specs_from_config

scenario_bp = Blueprint('scenario', __name__, cli_group=None)


@scenario_bp.cli.command('mobility')
@experiment_options
@click.option('--protocol', '-p', 'protocols', multiple=True)
@click.option('--speed', 'speeds', type=float, multiple=True, help='平均速度（公尺/時槽），可重複指定')
@click.option('--max-slots', type=int, default=None, help='每次模擬的時槽數')
@click.option('--n', type=int, default=None)
@cli_errors
def mobility(config_path, seed, runs, out, paper_scale, workers, protocols, speeds, max_slots, n):
    """移動情境：同步模式下持續跑到時槽上限，記錄合法顏色比例"""
    if config_path:
        specs = specs_from_config(config_path, [Scenario.MOBILITY])
    else:
        specs = [ExperimentSpec(scenario=Scenario.MOBILITY, protocols=protocols, speeds=speeds,
                                max_slots=max_slots, n=n)]
    execute_specs(specs, out, seed, runs, paper_scale, workers)


@scenario_bp.cli.command('wakeup')
@experiment_options
@click.option('--protocol', '-p', 'protocols', multiple=True)
@click.option('--late', 'late_counts', type=int, multiple=True, help='晚醒節點數，可重複指定')
@click.option('--n', type=int, default=None, help='先著色的節點數')
@cli_errors
def wakeup(config_path, seed, runs, out, paper_scale, workers, protocols, late_counts, n):
    """喚醒情境：既有節點著色完成後加入晚醒節點，統計受擾節點"""
    if config_path:
        specs = specs_from_config(config_path, [Scenario.WAKEUP])
    else:
        specs = [ExperimentSpec(scenario=Scenario.WAKEUP, protocols=protocols, late_counts=late_counts, n=n)]
    execute_specs(specs, out, seed, runs, paper_scale, workers)
