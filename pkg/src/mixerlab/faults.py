"""Deliberate-fault switches used by ``mixerlab verify --inject-fault``.

A fault is active only inside the ``inject`` context of the current thread
or task, so ordinary callers never see one.
"""

from __future__ import annotations

import contextlib
import contextvars

KNOWN_FAULTS = {
    "z-sign": "flip the sign of the key-sum increment in the recurrent linear-attention update",
}

_active: contextvars.ContextVar[frozenset] = contextvars.ContextVar("mixerlab_faults", default=frozenset())


def active(name: str) -> bool:
    return name in _active.get()


@contextlib.contextmanager
def inject(*names: str):
    unknown = [n for n in names if n not in KNOWN_FAULTS]
    if unknown:
        raise KeyError(f"unknown fault(s): {', '.join(unknown)}")
    token = _active.set(_active.get() | frozenset(names))
    try:
        yield
    finally:
        _active.reset(token)
