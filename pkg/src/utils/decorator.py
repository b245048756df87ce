import functools
import inspect
import logging
import time
from typing import Any, Callable

import numpy as np

logger = logging.getLogger(__name__)

_MAX_REPR = 120


def summarize(value: Any) -> str:
    """Short description of a value for debug logs; arrays show shape and dtype only."""
    if isinstance(value, np.ndarray):
        return f"ndarray(shape={value.shape}, dtype={value.dtype})"
    if hasattr(value, "__len__") and hasattr(value, "ids") and not isinstance(value, (str, bytes)):
        # Scene-like containers
        return f"{type(value).__name__}(n={len(value)})"
    if isinstance(value, (list, tuple)) and len(value) > 8:
        return f"{type(value).__name__}(len={len(value)})"
    text = repr(value)
    return text if len(text) <= _MAX_REPR else text[: _MAX_REPR - 3] + "..."


def log_method_io(method: Callable[..., Any]) -> Callable[..., Any]:
    """
    Decorator to debug-log the parameters, a summary of the result and the
    wall time of a call.
    仅包装同步方法。
    """
    sig = inspect.signature(method)
    names = list(sig.parameters.keys())
    start_idx = 1 if names and names[0] in ("self", "cls") else 0

    @functools.wraps(method)
    def sync_wrapper(*args: Any, **kwargs: Any) -> Any:
        if logger.isEnabledFor(logging.DEBUG):
            all_args = {**dict(zip(names[start_idx:], args[start_idx:])), **kwargs}
            logger.debug(
                f"Calling {method.__qualname__} with parameters:\n"
                + "\n".join(f"  {name}: {summarize(value)}" for name, value in all_args.items())
            )
        start = time.perf_counter()
        result = method(*args, **kwargs)
        elapsed = time.perf_counter() - start
        logger.debug(f"{method.__qualname__} returned {summarize(result)} in {elapsed * 1e3:.1f} ms")
        return result

    return sync_wrapper
