"""Policy names accepted on the command line."""

from __future__ import annotations

from collections.abc import Callable
from functools import partial

from .engine import Scheduler
from .fsp import PSBS, Pri, fsp, fspe
from .schedulers import DPS, FIFO, LAS, PS, SRPTE

FACTORIES: dict[str, Callable[[], Scheduler]] = {
    "fifo": FIFO,
    "ps": PS,
    "dps": DPS,
    "las": LAS,
    "srpt": partial(SRPTE, exact=True),
    "srpte": SRPTE,
    "srpte+ps": partial(SRPTE, "ps"),
    "srpte+las": partial(SRPTE, "las"),
    "fsp": fsp,
    "fspe": fspe,
    "fspe+ps": partial(fspe, "ps"),
    "fspe+las": partial(fspe, "las"),
    "psbs": PSBS,
}

POLICIES = tuple(FACTORIES) + ("pri:<policy>",)


def factory(name: str) -> Callable[[], Scheduler]:
    name = name.strip().lower()
    if name.startswith("pri:"):
        inner = factory(name[4:])
        return lambda: Pri(inner, name=name)
    try:
        return FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown scheduler {name!r}; choose from {', '.join(POLICIES)}") from None


def make_scheduler(name: str) -> Scheduler:
    return factory(name)()
