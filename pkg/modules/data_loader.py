"""
資料載入模組
負責載入 defaults.json 預設參數，以及 `[section]` 加 `key = value` 格式的實驗設定檔。
"""

import configparser
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from modules.experiment import ExperimentSpec, Scenario

CONFIG_VERSION = 1

# defaults.json 必備的區段
REQUIRED_SECTIONS = ("SINR", "KERNEL", "DISTRIBUTIONS", "PROTOCOLS", "DEPLOYMENT", "SCALES")


class ConfigError(ValueError):
    """設定檔內容錯誤，訊息包含區段與欄位名稱"""


def validate_defaults(data: Mapping) -> None:
    """
    檢查預設參數的版本與必備區段。

    Raises:
        ConfigError: 版本不符或缺少區段
    """
    version = data.get("CONFIG_VERSION")
    if version != CONFIG_VERSION:
        raise ConfigError(f"不支援的 defaults 版本: {version}（需要 {CONFIG_VERSION}）")
    missing = [key for key in REQUIRED_SECTIONS if key not in data]
    if missing:
        raise ConfigError(f"defaults 缺少區段: {', '.join(missing)}")


def load_defaults(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    載入預設參數。

    Args:
        path: JSON 檔案路徑，若為 None 則使用專案根目錄的 defaults.json

    Returns:
        預設參數字典

    Raises:
        FileNotFoundError: 找不到檔案
        ConfigError: 內容不合法
    """
    if path is None:
        base_path = Path(__file__).parent.parent
        path = base_path / "defaults.json"

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到預設參數檔: {path}")

    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} 不是合法的 JSON: {e}")

    validate_defaults(data)
    return data


def _split(text: str) -> List[str]:
    return [part.strip() for part in text.replace(";", ",").split(",") if part.strip()]


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"不是布林值: {text}")


def _area(text: str):
    parts = [p for p in text.lower().replace("x", ",").replace("×", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"區域格式應為 寬x高: {text}")
    return float(parts[0]), float(parts[1])


def _ints(text: str):
    return tuple(int(v) for v in _split(text))


def _floats(text: str):
    return tuple(float(v) for v in _split(text))


def _strings(text: str):
    return tuple(_split(text))


# 設定檔欄位 -> (ExperimentSpec 欄位, 轉換函式)
_FIELDS: Dict[str, tuple] = {
    "scenario": ("scenario", Scenario.parse),
    "name": ("name", str),
    "protocols": ("protocols", _strings),
    "protocol": ("protocols", _strings),
    "distributions": ("distributions", _strings),
    "distribution": ("distributions", _strings),
    "scale": ("scale", str),
    "n": ("n", int),
    "area": ("area", _area),
    "runs": ("runs", int),
    "seed": ("master_seed", int),
    "master_seed": ("master_seed", int),
    "tx_const": ("tx_const", float),
    "duration": ("duration", int),
    "factor": ("factor", float),
    "duration_prime": ("duration_prime", int),
    "redraw": ("redraw", str),
    "factors": ("factors", _floats),
    "duration_prime_fractions": ("duration_prime_fractions", _floats),
    "palette_factors": ("palette_factors", _floats),
    "speeds": ("speeds", _floats),
    "late_counts": ("late_counts", _ints),
    "tx_const_grid": ("tx_const_grid", _floats),
    "mode": ("mode", str),
    "max_slots": ("max_slots", int),
    "positions_dir": ("positions_dir", str),
    "progress": ("progress", _bool),
}


def _parse_section(section: str, items: Mapping[str, str]) -> ExperimentSpec:
    if "scenario" not in items:
        raise ConfigError(f"[{section}] 缺少 scenario")
    kwargs: Dict[str, Any] = {"name": section}
    for key, raw in items.items():
        if key not in _FIELDS:
            raise ConfigError(f"[{section}] 未知的欄位: {key}")
        target, convert = _FIELDS[key]
        try:
            kwargs[target] = convert(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} = {raw!r} 不合法: {e}")
    try:
        return ExperimentSpec(**kwargs)
    except ValueError as e:
        raise ConfigError(f"[{section}] {e}")


def load_experiment_config(path: Union[str, Path]) -> List[ExperimentSpec]:
    """
    載入實驗設定檔。

    格式為 `[section]` 標頭加上 `key = value` 行；`[meta]` 區段的 version
    必須為 1，其餘每個區段是一個實驗，必須有 `scenario = ...`。
    清單以逗號分隔，例如 `factors = 0.05, 0.2, 0.6`。

    Args:
        path: 設定檔路徑

    Returns:
        依檔案順序排列的 ExperimentSpec 清單

    Raises:
        FileNotFoundError: 找不到檔案
        ConfigError: 格式或數值錯誤
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到實驗設定檔: {path}")

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path} 格式錯誤: {e}")

    if not parser.has_section("meta"):
        raise ConfigError(f"{path} 缺少 [meta] 區段")
    version = parser.get("meta", "version", fallback=None)
    if version is None or version.strip() != str(CONFIG_VERSION):
        raise ConfigError(f"{path} 不支援的設定版本: {version}（需要 {CONFIG_VERSION}）")

    specs = [
        _parse_section(section, dict(parser.items(section)))
        for section in parser.sections() if section != "meta"
    ]
    if not specs:
        raise ConfigError(f"{path} 沒有任何實驗區段")
    return specs
