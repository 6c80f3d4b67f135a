"""Engine selection: compiled kernel when importable, numpy fallback otherwise.

Set REGIMEPUSH_BACKEND=pure|compiled to force a choice (compiled raises if the
extension is unavailable)."""

from __future__ import annotations

import os

from . import _engine_py

_engine = None


def get_engine():
    global _engine
    if _engine is not None:
        return _engine
    choice = os.environ.get("REGIMEPUSH_BACKEND", "auto")
    if choice == "pure":
        _engine = _engine_py
    elif choice == "compiled":
        from . import _engine as compiled  # raises if not built
        _engine = compiled
    else:
        try:
            from . import _engine as compiled
            _engine = compiled
        except ImportError:
            _engine = _engine_py
    return _engine


def available_engines():
    """(name, module) pairs for every importable backend."""
    out = [(_engine_py.BACKEND_NAME, _engine_py)]
    try:
        from . import _engine as compiled
        out.append((compiled.BACKEND_NAME, compiled))
    except ImportError:
        pass
    return out
