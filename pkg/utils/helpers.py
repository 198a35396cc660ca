import hashlib
import json
import os
from typing import Any, List, Optional

from reportlab.lib import colors

from config import CSV_FLOAT_FORMAT
from core.errors import ValidationError


def safe_color(value: Optional[str], default: str = '#1F3A5F') -> colors.Color:
    """Template hex string to a ReportLab color; missing or malformed values use `default`."""
    try:
        return colors.HexColor(value or default)
    except (ValueError, TypeError):
        return colors.HexColor(default)


def fmt_float(value: float) -> str:
    return format(float(value), CSV_FLOAT_FORMAT)


def parse_float_list(text: Optional[str], name: str = "value") -> List[float]:
    """'0, 1.5,-2' -> [0.0, 1.5, -2.0]"""
    if text is None or not str(text).strip():
        raise ValidationError(f"{name} list is empty")
    try:
        return [float(part) for part in str(text).replace(';', ',').split(',') if part.strip()]
    except ValueError as e:
        raise ValidationError(f"could not parse {name} list {text!r}: {e}") from e


def atomic_write_text(path: str, text: str) -> None:
    """Write to a temporary file first, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    temp_file = f"{path}.tmp"
    try:
        with open(temp_file, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temp_file, path)
    except (IOError, OSError, PermissionError):
        try:
            if os.path.exists(temp_file):
                os.remove(temp_file)
        except (OSError, PermissionError):
            pass
        raise


def write_json(path: str, data: Any) -> None:
    atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def load_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValidationError(f"cannot read {path}: {e}") from e


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
