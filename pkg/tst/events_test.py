import json
import os
import tempfile
import unittest

from ridgesparse.events import EventRecorder, JsonLinesLog, Listenable, ListenerManager, StepEvent, StepEventType


class TestListenerManager(unittest.TestCase):

    def test_notify_in_registration_order(self):
        manager = ListenerManager()
        seen = []
        manager.add_listener(lambda e: seen.append(("first", e.type)))
        manager.add_listener(lambda e: seen.append(("second", e.type)))

        manager.notify(StepEvent(None, StepEventType.STARTED))

        self.assertEqual([("first", StepEventType.STARTED), ("second", StepEventType.STARTED)], seen)

    def test_duplicates_and_missing(self):
        manager = ListenerManager()
        recorder = EventRecorder()
        manager.add_listener(recorder)

        with self.assertRaises(ValueError):
            manager.add_listener(recorder)

        manager.remove_listener(recorder)
        with self.assertRaises(ValueError):
            manager.remove_listener(recorder)

    def test_rejects_non_events(self):
        with self.assertRaises(ValueError):
            ListenerManager().notify({"type": "started"})

    def test_listenable(self):
        self.assertIsInstance(Listenable().listener_manager, ListenerManager)


class TestEventRecorder(unittest.TestCase):

    def test_of_type(self):
        recorder = EventRecorder()
        recorder(StepEvent(None, StepEventType.STARTED, {"step": 0}))
        recorder(StepEvent(None, StepEventType.REDUCED, {"step": 0}))
        recorder(StepEvent(None, StepEventType.STARTED, {"step": 1}))

        started = recorder.of_type(StepEventType.STARTED)
        self.assertEqual([0, 1], [e.payload["step"] for e in started])
        self.assertEqual([], recorder.of_type(StepEventType.RELAXED))


class TestJsonLinesLog(unittest.TestCase):

    def test_appends_one_object_per_event(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.jsonl")
            log = JsonLinesLog(path)

            log(StepEvent(None, StepEventType.STARTED, {"step": 0, "support": 100}))
            log(StepEvent(None, StepEventType.STOPPED, {"steps": 3}))

            with open(path, "r", encoding="utf-8") as f:
                lines = f.read().splitlines()

        self.assertEqual(2, log.count)
        self.assertEqual({"event": "started", "step": 0, "support": 100}, json.loads(lines[0]))
        self.assertEqual("stopped", json.loads(lines[1])["event"])


if __name__ == '__main__':
    unittest.main()
