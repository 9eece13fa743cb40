import functools
import sys
from hashlib import sha256
from time import time
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from loguru import logger
from tqdm.auto import tqdm

_SHOW_PROGRESS = False
_LOG_LEVEL: Optional[str] = None


def timer_func(func):
    @functools.wraps(func)
    def wrap_func(*args, **kwargs):
        t1 = time()
        result = func(*args, **kwargs)
        t2 = time()
        logger.debug(f"Function {func.__name__!r} executed in {(t2-t1):.4f}s")
        return result

    return wrap_func


def configure_logging(level: str = "INFO"):
    """Routes loguru to a single stderr sink at the given level."""
    global _LOG_LEVEL
    logger.remove()
    logger.add(sys.stderr, level=level)
    _LOG_LEVEL = level


def log_level() -> Optional[str]:
    return _LOG_LEVEL


def follow_log_level(level: Optional[str]):
    """Applies the parent process log level inside a joblib worker.

    Worker processes import loguru afresh with its default DEBUG sink; None leaves
    that sink alone.

    """
    if level is not None and level != _LOG_LEVEL:
        configure_logging(level)


def set_progress(enabled: bool):
    """Turns the tqdm progress bars on or off for the whole package."""
    global _SHOW_PROGRESS
    _SHOW_PROGRESS = enabled


def progress(iterable: Iterable, desc: str, total: Optional[int] = None):
    return tqdm(iterable, desc=desc, total=total, disable=not _SHOW_PROGRESS)


def fingerprint(*parts) -> str:
    """Hashes strings and numpy arrays into a stable hex digest.

    Args:
        *parts: Strings, numbers or numpy arrays.

    Returns:
        str: sha256 hex digest of the parts, in order.

    """
    hash_value = sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            hash_value.update(str(part.dtype).encode("utf-8"))
            hash_value.update(np.ascontiguousarray(part).tobytes())
        else:
            hash_value.update(str(part).encode("utf-8"))
        hash_value.update(b"\x00")
    return hash_value.hexdigest()


def nonparametric_skew(values: np.ndarray) -> float:
    """Pearson's median skewness 3 * (mean - median) / std.

    Zero when the values have no spread, so the sign always follows mean - median.

    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return float("nan")
    std = values.std()
    if std == 0:
        return 0.0
    return float(3.0 * (values.mean() - np.median(values)) / std)


def format_df(df: pd.DataFrame, width: Optional[int] = None) -> str:
    """HTML table of a report frame, missing values left blank."""
    html_classes = ["table", "table-striped", "table-hover", "table-primary"]
    html = df.to_html(classes=html_classes, index=False, na_rep="", float_format="%.2f")
    if width is None:
        return html
    return f'<div style="width: {width}px;">{html}</div>'
