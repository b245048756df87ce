import os
import enum
from pathlib import Path


class LogLevel(enum.Enum):
    """日志级别枚举"""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"


def _default_thread_count() -> int:
    value = os.getenv("SPLATS_NUM_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


DEFAULT_NUM_THREADS = _default_thread_count()
SELECTED_LOG_LEVEL = os.getenv("SPLATS_LOG_LEVEL", LogLevel.INFO.value).upper()
DEFAULT_CONFIG_PATH = Path(
    os.getenv("SPLATS_CONFIG", str(Path(__file__).parent.parent.parent / "conf.yaml"))
)
