"""Tests for checkpoints, metric records, and the report/trace writers."""

import json
import os
import tempfile
import unittest

import numpy as np

from saliency.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from saliency.errors import CheckpointError
from saliency.metrics import evaluate
from saliency.network import GeleNet, ModelSpec
from saliency.optim import Parameter
from saliency.records import append_records, image_record, load_records
from saliency.tensor import Tensor
from ui.output import (
    format_curves_csv,
    format_text_report,
    parse_text_report,
    read_loss_trace,
    save_json,
    write_loss_trace,
    write_report_bundle,
)


class _TempDir(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()


class TestCheckpoint(_TempDir):
    def test_model_round_trip(self):
        path = os.path.join(self.dir, "ckpt", "checkpoint.bin")
        source = GeleNet(ModelSpec(), seed=0)
        save_checkpoint(path, source.parameters())
        target = GeleNet(ModelSpec(), seed=1)
        self.assertEqual(load_checkpoint(path, target.parameters()), len(source.parameters()))
        for a, b in zip(source.parameters(), target.parameters()):
            self.assertEqual(a.name, b.name)
            np.testing.assert_array_equal(a.value.data, b.value.data)

    def test_file_order_and_values(self):
        path = os.path.join(self.dir, "p.bin")
        params = [
            Parameter("b", Tensor(np.arange(6.0).reshape(2, 3))),
            Parameter("a", Tensor(np.array(-1.5))),
        ]
        save_checkpoint(path, params)
        stored = read_checkpoint(path)
        self.assertEqual(list(stored), ["b", "a"])
        np.testing.assert_array_equal(stored["b"], np.arange(6.0).reshape(2, 3))
        self.assertEqual(stored["a"].shape, ())
        with open(path, "rb") as fh:
            self.assertEqual(fh.read(8), b"GELENET1")

    def test_bad_magic(self):
        path = os.path.join(self.dir, "bad.bin")
        with open(path, "wb") as fh:
            fh.write(b"NOTMAGIC")
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)

    def test_truncated(self):
        path = os.path.join(self.dir, "p.bin")
        save_checkpoint(path, [Parameter("w", Tensor(np.ones((4, 4))))])
        with open(path, "rb") as fh:
            data = fh.read()
        with open(path, "wb") as fh:
            fh.write(data[:-3])
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)

    def test_architecture_mismatch(self):
        path = os.path.join(self.dir, "p.bin")
        save_checkpoint(path, GeleNet(ModelSpec(ktm=False)).parameters())
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(path, GeleNet(ModelSpec()).parameters())
        self.assertIn("missing", str(ctx.exception))

    def test_shape_mismatch_leaves_values(self):
        path = os.path.join(self.dir, "p.bin")
        save_checkpoint(path, [Parameter("w", Tensor(np.ones((2, 2))))])
        target = Parameter("w", Tensor(np.zeros(3)))
        with self.assertRaises(CheckpointError):
            load_checkpoint(path, [target])
        np.testing.assert_array_equal(target.value.data, 0.0)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            read_checkpoint(os.path.join(self.dir, "absent.bin"))


class TestRecords(_TempDir):
    def test_append_and_load(self):
        path = os.path.join(self.dir, "records.jsonl")
        append_records(path, [image_record("a", {"mae": 0.25}), image_record("b", {"mae": 0.5}, split="train")])
        append_records(path, [image_record("c", {"mae": 0.125})])
        records = load_records(path)
        self.assertEqual([r["id"] for r in records], ["a", "b", "c"])
        self.assertEqual(records[1]["split"], "train")
        self.assertEqual([r["id"] for r in load_records(path, limit=2)], ["b", "c"])

    def test_corrupt_line_skipped(self):
        path = os.path.join(self.dir, "records.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write('{"id": "a"}\n{broken\n{"id": "b"}\n')
        with self.assertLogs("saliency.records", level="WARNING"):
            records = load_records(path)
        self.assertEqual([r["id"] for r in records], ["a", "b"])

    def test_missing_file(self):
        self.assertEqual(load_records(os.path.join(self.dir, "none.jsonl")), [])


class TestReports(_TempDir):
    def setUp(self):
        super().setUp()
        gt = np.zeros((8, 8))
        gt[2:6, 2:6] = 1.0
        self.pred = np.random.default_rng(3).uniform(size=(8, 8))
        self.report = evaluate(self.pred, gt)
        self.gt = gt

    def test_text_report_parses_back(self):
        values = parse_text_report(format_text_report(self.report, "train"))
        self.assertEqual(values["images"], 1.0)
        for key, value in self.report.scalars().items():
            self.assertAlmostEqual(values[key], value, delta=5e-7)

    def test_curves_csv(self):
        lines = format_curves_csv(self.report).splitlines()
        self.assertEqual(len(lines), 257)
        self.assertEqual(lines[0], "threshold,precision,recall,f_measure")
        self.assertTrue(lines[1].startswith("0,"))
        self.assertTrue(lines[-1].startswith("255,"))

    def test_loss_trace_exact(self):
        path = os.path.join(self.dir, "loss_trace.csv")
        losses = [1.0 / 3.0, 0.7071067811865476, 1e-9]
        write_loss_trace(path, losses, [1e-4, 1e-4, 1e-5])
        self.assertEqual(read_loss_trace(path), losses)

    def test_report_bundle(self):
        other = evaluate(1.0 - self.pred, self.gt)
        paths = write_report_bundle(self.dir, self.report, [("x", self.report), ("y", other)])
        self.assertEqual(set(paths), {"text", "curves", "json", "records"})
        with open(paths["json"], encoding="utf-8") as fh:
            record = json.load(fh)
        self.assertEqual(len(record["f_curve"]), 256)
        self.assertEqual(sorted(record["images"]), ["x", "y"])
        self.assertEqual(len(load_records(paths["records"])), 2)
        # rewriting replaces the per-image records
        write_report_bundle(self.dir, self.report, [("x", self.report)])
        self.assertEqual(len(load_records(paths["records"])), 1)

    def test_bundle_without_images(self):
        paths = write_report_bundle(self.dir, self.report)
        self.assertNotIn("records", paths)

    def test_save_json_sorted(self):
        path = os.path.join(self.dir, "nested", "r.json")
        save_json({"b": 1, "a": [1, 2]}, path)
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertFalse(any(name.startswith(".tmp_") for name in os.listdir(os.path.dirname(path))))


if __name__ == "__main__":
    unittest.main()
