from __future__ import annotations

import json
import logging
import threading
import typing
from enum import Enum

logger = logging.getLogger(__name__)


class StepEventType(Enum):
    STARTED = 0
    REDUCED = 1
    RELAXED = 2
    STOPPED = 3


class StepEvent:

    def __init__(self,
                 target,
                 type: StepEventType,
                 payload: typing.Optional[typing.Dict[str, typing.Any]] = None):
        self._target = target
        self._type = type
        self._payload = payload if payload is not None else {}

    @property
    def target(self):
        return self._target

    @property
    def type(self) -> StepEventType:
        return self._type

    @property
    def payload(self) -> typing.Dict[str, typing.Any]:
        return self._payload


class ListenerManager:

    def __init__(self):
        self._listeners = []

    def add_listener(self, l: typing.Callable[[StepEvent], None]):
        if l in self._listeners:
            raise ValueError("Duplicate entry.")

        self._listeners.append(l)

    def remove_listener(self, l: typing.Callable[[StepEvent], None]):
        if l not in self._listeners:
            raise ValueError("Listener not present")

        self._listeners.remove(l)

    def notify(self, step_event: StepEvent):
        if not isinstance(step_event, StepEvent):
            raise ValueError("Please send step events.")

        # registration order, so run logs are reproducible
        for l in self._listeners:
            l(step_event)


class Listenable:

    def __init__(self):
        self.listener_manager = ListenerManager()


class JsonLinesLog:
    """
    Step listener appending one JSON object per event to a run log.
    """

    def __init__(self, path: str):
        self._path = path
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def __call__(self, step_event: StepEvent):
        record = {"event": step_event.type.name.lower()}
        record.update(step_event.payload)

        with self._lock, open(self._path, "a", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
            self._count += 1

        logger.debug(f"Wrote {record['event']} event to {self._path}")


class EventRecorder:

    def __init__(self):
        self.events: typing.List[StepEvent] = []

    def __call__(self, step_event: StepEvent):
        self.events.append(step_event)

    def of_type(self, type: StepEventType) -> typing.List[StepEvent]:
        return [e for e in self.events if e.type == type]
