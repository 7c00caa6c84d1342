"""Per-epoch training records, kept in memory and appended to line-oriented log files."""
import os
import logging
import threading
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

LOG_COLUMNS = {
    "pretrain": ("epoch", "interior", "boundary", "commitment", "total", "lr"),
    "finetune": ("epoch", "loss", "accuracy", "lr"),
    "codebook": ("epoch", "codebook", "perplexity", "dead", "used"),
    "validation": ("epoch", "accuracy"),
}


def _format(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Collector:
    def __init__(self, log_dir: Optional[str] = None, columns: Dict[str, Sequence[str]] = None):
        self.metrics: Dict[str, List[Dict[str, Any]]] = {}
        self.log_dir = log_dir
        self.columns = dict(LOG_COLUMNS if columns is None else columns)
        self.lock = threading.Lock()
        if log_dir is not None:
            os.makedirs(log_dir, exist_ok=True)

    def log_path(self, name: str) -> Optional[str]:
        if self.log_dir is None:
            return None
        return os.path.join(self.log_dir, f"{name}.log")

    def start(self, name: str):
        """Truncates the log for `name` and writes its column header."""
        with self.lock:
            self.metrics[name] = []
            path = self.log_path(name)
            if path is not None:
                with open(path, "w") as f:
                    f.write("# " + " ".join(self.columns[name]) + "\n")

    def record(self, name: str, **values):
        columns = self.columns.get(name)
        if columns is None:
            raise KeyError(f"No log columns registered for {name!r}")
        missing = [c for c in columns if c not in values]
        if missing:
            raise KeyError(f"Record for {name!r} lacks columns {missing}")
        with self.lock:
            self.metrics.setdefault(name, []).append(dict(values))
            path = self.log_path(name)
            if path is not None:
                try:
                    with open(path, "a") as f:
                        f.write(" ".join(_format(values[c]) for c in columns) + "\n")
                except IOError as e:
                    logger.error(f"Could not append to {path}: {e}")
                    raise

    def get(self, name: str) -> List[Dict[str, Any]]:
        return self.metrics.get(name, [])


def read_log(path: str) -> List[Dict[str, str]]:
    """Parses a log written by Collector back into column -> text records."""
    with open(path, "r") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path} has no column header")
    columns = lines[0][1:].split()
    return [dict(zip(columns, line.split())) for line in lines[1:]]
