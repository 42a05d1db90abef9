from flask import Blueprint
import click
import sys
import os

# 添加父目錄到路徑
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.experiment import ExperimentSpec, Scenario
from modules.kernel import SyncMode
from routes import cli_errors, execute_specs, experiment_options, specs_from_config

simulation_bp = Blueprint('simulation', __name__, cli_group=None)

# sweep --kind 對應的情境與格點欄位
SWEEP_KINDS = {
    'factor': (Scenario.FACTOR_SWEEP, 'factors'),
    'duration-prime': (Scenario.DURATION_PRIME_SWEEP, 'duration_prime_fractions'),
    'initial-color': (Scenario.INITIAL_COLOR_STUDY, 'palette_factors'),
    'phase-length': (Scenario.PHASE_LENGTH, 'factors'),
    'rand-variants': (Scenario.RAND_VARIANTS, None),
}


@simulation_bp.cli.command('run')
@experiment_options
@click.option('--protocol', '-p', 'protocols', multiple=True, help='協定名稱，可重複指定')
@click.option('--distribution', '-d', 'distributions', multiple=True, default=('Random',), show_default=True)
@click.option('--n', type=int, default=None, help='節點數（預設依規模）')
@click.option('--factor', type=float, default=None)
@click.option('--duration-prime', type=int, default=None)
@click.option('--mode', type=click.Choice([m.value for m in SyncMode]), default=None)
@click.option('--max-slots', type=int, default=None)
@click.option('--positions-dir', type=click.Path(file_okay=False), default=None,
              help='預先產生的位置檔目錄')
@cli_errors
def run_command(config_path, seed, runs, out, paper_scale, workers,
                protocols, distributions, n, factor, duration_prime, mode, max_slots, positions_dir):
    """執行單一協定（或設定檔中的所有實驗）"""
    if config_path:
        specs = specs_from_config(config_path, list(Scenario))
    else:
        specs = [ExperimentSpec(
            scenario=Scenario.RUN, protocols=protocols, distributions=distributions, n=n,
            factor=factor, duration_prime=duration_prime, mode=mode, max_slots=max_slots,
            positions_dir=positions_dir,
        )]
    execute_specs(specs, out, seed, runs, paper_scale, workers)


@simulation_bp.cli.command('sweep')
@experiment_options
@click.option('--kind', type=click.Choice(list(SWEEP_KINDS)), default='factor', show_default=True)
@click.option('--protocol', '-p', 'protocols', multiple=True)
@click.option('--distribution', '-d', 'distributions', multiple=True, default=('Random',), show_default=True)
@click.option('--value', 'values', type=float, multiple=True,
              help='格點值（factor、duration′ 比例或調色盤倍數），可重複指定')
@click.option('--n', type=int, default=None)
@cli_errors
def sweep(config_path, seed, runs, out, paper_scale, workers, kind, protocols, distributions, values, n):
    """參數掃描：factor、duration′、初始調色盤、階段長度或 Rand 變體"""
    if config_path:
        specs = specs_from_config(config_path, [scenario for scenario, _ in SWEEP_KINDS.values()])
    else:
        scenario, grid_field = SWEEP_KINDS[kind]
        fields = {grid_field: values} if grid_field else {}
        specs = [ExperimentSpec(scenario=scenario, protocols=protocols, distributions=distributions, n=n, **fields)]
    execute_specs(specs, out, seed, runs, paper_scale, workers)


@simulation_bp.cli.command('compare')
@experiment_options
@click.option('--protocol', '-p', 'protocols', multiple=True, help='預設為完整比較清單')
@click.option('--distribution', '-d', 'distributions', multiple=True, default=('Random',), show_default=True,
              help='all 表示全部七種部署')
@click.option('--n', type=int, default=None)
@cli_errors
def compare(config_path, seed, runs, out, paper_scale, workers, protocols, distributions, n):
    """在相同部署上比較多個協定"""
    if config_path:
        specs = specs_from_config(config_path, [Scenario.COMPARISON])
    else:
        specs = [ExperimentSpec(scenario=Scenario.COMPARISON, protocols=protocols,
                                distributions=distributions, n=n)]
    execute_specs(specs, out, seed, runs, paper_scale, workers)
