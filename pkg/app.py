"""
SINR 著色模擬器
在 SINR 干擾模型下逐封包模擬無線隨意網路上的分散式著色協定，
並提供部署產生、本地廣播校正與各項實驗的命令列指令。
"""

import json
import logging
import os
import sys

from flask import Flask
from flask.cli import FlaskGroup

# 添加當前目錄到 Python 路徑
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# 導入模組
from modules.data_loader import validate_defaults
from routes.deployment_routes import deployment_bp
from routes.scenario_routes import scenario_bp
from routes.simulation_routes import simulation_bp


def create_app(config_overrides=None):
    """
    建立應用程式。

    設定依序來自 defaults.json、SINRCOLOR_ 開頭的環境變數
    （例如 SINRCOLOR_KERNEL__max_slots=50000）與 config_overrides。
    """
    app = Flask(__name__)
    app.config.from_file('defaults.json', load=json.load)
    app.config.from_prefixed_env('SINRCOLOR')
    if config_overrides:
        app.config.update(config_overrides)
    validate_defaults(app.config)

    logging.basicConfig(
        level=app.config.get('LOG_LEVEL', 'INFO'),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    # 註冊藍圖（只註冊 CLI 指令）
    app.register_blueprint(deployment_bp)
    app.register_blueprint(simulation_bp)
    app.register_blueprint(scenario_bp)
    return app


cli = FlaskGroup(create_app=create_app, add_default_commands=False, help='SINR 著色模擬器')


if __name__ == '__main__':
    cli()
