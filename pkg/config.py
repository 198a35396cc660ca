import os
from typing import Any, Callable, Dict, Optional

from PyQt6 import QtCore

APP_NAME = "StickyLDP"
APP_ORG = "Toolkit"
TOOL_VERSION = "1.0.0"
ENV_PREFIX = "STICKYLDP_"
DEFAULT_OUTPUT_DIR = "runs"

# Measures
WEAK_TRUNCATION = 64
ATOM_MERGE_TOL = 1e-12
MASS_RTOL = 1e-12

# Cluster dynamics
MERGE_TIME_RTOL = 1e-10
COINCIDE_TOL = 1e-12

# KPZ shape
PARABOLA_DISC_TOL = 1e-14
CONCAVITY_TOL = 1e-10
INVERT_TOL = 1e-10
INVERT_MAX_SWEEPS = 10_000
DUALITY_TOL = 1e-8
MERGE_INSTANT_TOL = 1e-9

# SDE
DEFAULT_DT_FACTOR = 1e-3
DEFAULT_SEED = 20240229
NOISE_BLOCK = 1024
DEFAULT_SNAPSHOTS = 21
SPREAD_THRESHOLD = 0.1
SPREAD_QUANTILES = (0.1, 0.5, 0.9)

# Output
CSV_FLOAT_FORMAT = ".17g"
MANIFEST_NAME = "manifest.json"

# Worker pool
DEFAULT_WORKERS = 0  # 0 means QThreadPool's ideal thread count

REPORT_TEMPLATES = {
    "Normal": {
        "title_color": "#1F3A5F",
        "heading_color": "#2F4F4F",
        "font_family": "Helvetica",
        "title_size": 18,
        "heading_size": 13,
        "body_size": 10,
        "table_header": "#DCE6F0",
        "grid_color": "#9AA5B1",
    },
    "Compact": {
        "title_color": "#000000",
        "heading_color": "#333333",
        "font_family": "Courier",
        "title_size": 14,
        "heading_size": 11,
        "body_size": 8,
        "table_header": "#EEEEEE",
        "grid_color": "#BBBBBB",
    },
}
DEFAULT_REPORT_TEMPLATE = "Normal"


def _settings() -> QtCore.QSettings:
    return QtCore.QSettings(APP_NAME, APP_ORG)


def read_config_file(path: Optional[str]) -> Dict[str, str]:
    """
    Parse a key=value run file.
    Blank lines and '#' comments are skipped; keys are normalised to
    lower case with '-' folded into '_'.
    """
    values: Dict[str, str] = {}
    if not path:
        return values
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' in line:
                key, value = line.split('=', 1)
                key = key.strip().lower().replace('-', '_')
                value = value.strip().strip('"').strip("'")
                if key:
                    values[key] = value
    return values


def resolve_setting(
    key: str,
    flag_value: Any,
    file_values: Dict[str, str],
    default: Any,
    cast: Callable[[Any], Any] = str,
) -> Any:
    """
    Effective value of one run parameter.
    Priority: flag > config file > QSettings > environment > default
    """
    if flag_value is not None:
        return flag_value
    if key in file_values:
        return cast(file_values[key])
    stored = _settings().value(key, None)
    if stored not in (None, ""):
        return cast(stored)
    env_value = os.getenv(ENV_PREFIX + key.upper(), "").strip()
    if env_value:
        return cast(env_value)
    return default


def get_configured_workers() -> int:
    return int(resolve_setting("workers", None, {}, DEFAULT_WORKERS, int))


def get_configured_weak_truncation() -> int:
    value = int(resolve_setting("weak_truncation", None, {}, WEAK_TRUNCATION, int))
    return max(1, value)


def get_configured_report_template() -> Dict[str, Any]:
    name = resolve_setting("report_template", None, {}, DEFAULT_REPORT_TEMPLATE)
    return REPORT_TEMPLATES.get(name, REPORT_TEMPLATES[DEFAULT_REPORT_TEMPLATE])
