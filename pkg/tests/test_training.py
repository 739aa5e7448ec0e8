"""Tests for the training loop, schedule, evaluation helpers and ablation runs."""

import os
import unittest

import numpy as np

from saliency.ablation import (
    GROUPS,
    VARIANTS,
    AblationRow,
    format_delta,
    resolve_variants,
    run_ablation,
    variant_config,
    with_deltas,
)
from saliency.config import resolve_config
from saliency.errors import ConfigError
from saliency.metrics import MetricReport
from saliency.network import model_from_config
from saliency.training import Trainer, evaluate_model, learning_rate, load_dataset, predict

SLOW = os.environ.get("GELENET_SLOW") == "1"


def tiny_config(**overrides):
    values = {"epochs": "1", "synth_count": "2", "batch_size": "2"}
    values.update({k: str(v) for k, v in overrides.items()})
    return resolve_config(overrides=values)


class TestSchedule(unittest.TestCase):
    def test_step_decay(self):
        cfg = resolve_config(overrides={"lr": "1e-4", "lr_decay": "0.1", "lr_decay_every": "30"})
        self.assertEqual(learning_rate(cfg, 0), 1e-4)
        self.assertEqual(learning_rate(cfg, 29), 1e-4)
        self.assertAlmostEqual(learning_rate(cfg, 30), 1e-5, delta=1e-18)
        self.assertAlmostEqual(learning_rate(cfg, 61), 1e-6, delta=1e-18)

    def test_decay_disabled(self):
        cfg = resolve_config(preset="desk")
        self.assertEqual(learning_rate(cfg, 250), cfg.lr)


class TestTrainer(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cfg = tiny_config(epochs=2, synth_count=3)
        cls.samples = load_dataset(cls.cfg)

    def test_deterministic(self):
        first = Trainer(self.cfg, self.samples).fit()
        second = Trainer(self.cfg, self.samples).fit()
        self.assertEqual(first.losses, second.losses)
        self.assertEqual(first.iterations, 4)
        self.assertTrue(all(np.isfinite(first.losses)))

    def test_progress_callbacks(self):
        trainer = Trainer(self.cfg, self.samples)
        steps, epochs = [], []
        trainer.on_progress = lambda done, total, loss: steps.append((done, total))
        trainer.on_epoch = lambda epoch, lr, loss: epochs.append(epoch)
        trainer.fit()
        self.assertEqual(steps[-1], (4, 4))
        self.assertEqual([s[0] for s in steps], [1, 2, 3, 4])
        self.assertEqual(epochs, [1, 2])

    def test_zero_epochs_keeps_initialisation(self):
        cfg = self.cfg.replace(epochs=0)
        trainer = Trainer(cfg, self.samples)
        result = trainer.fit()
        self.assertEqual(result.losses, [])
        self.assertIsNone(result.to_dict()["final_loss"])
        for a, b in zip(trainer.model.parameters(), model_from_config(cfg).parameters()):
            np.testing.assert_array_equal(a.value.data, b.value.data)

    def test_training_moves_parameters(self):
        trainer = Trainer(self.cfg, self.samples)
        before = [p.value.data.copy() for p in trainer.model.parameters()]
        trainer.fit()
        changed = [not np.array_equal(b, p.value.data) for b, p in zip(before, trainer.model.parameters())]
        self.assertTrue(any(changed))

    def test_augmented_run_is_deterministic(self):
        cfg = self.cfg.replace(augment=True, epochs=1)
        self.assertEqual(Trainer(cfg, self.samples).fit().losses, Trainer(cfg, self.samples).fit().losses)

    def test_evaluate_model(self):
        model = model_from_config(self.cfg)
        per_image, report = evaluate_model(model, self.samples)
        self.assertEqual([image_id for image_id, _ in per_image], [s.id for s in self.samples])
        self.assertEqual(report.count, 3)
        self.assertTrue(0.0 <= report.mae <= 1.0)

    def test_predict_batches_agree(self):
        model = model_from_config(self.cfg)
        images = np.stack([s.image for s in self.samples])
        np.testing.assert_allclose(predict(model, images, batch_size=1), predict(model, images, batch_size=3),
                                   rtol=0, atol=1e-12)

    def test_short_run_reduces_loss(self):
        cfg = tiny_config(epochs=25, lr_decay_every=0, lr="5e-3")
        samples = load_dataset(cfg)
        result = Trainer(cfg, samples).fit()
        self.assertEqual(len(result.losses), 25)
        self.assertLess(np.mean(result.losses[-5:]), 0.9 * result.losses[0])

    @unittest.skipUnless(SLOW, "set GELENET_SLOW=1 for the overfitting run")
    def test_overfits_tiny_dataset(self):
        cfg = tiny_config(epochs=150, synth_count=4, batch_size=4, lr_decay_every=0, lr="1e-3")
        samples = load_dataset(cfg)
        trainer = Trainer(cfg, samples)
        result = trainer.fit()
        self.assertLess(np.mean(result.losses[-10:]), 0.5 * np.mean(result.losses[:10]))
        _, report = evaluate_model(trainer.model, samples)
        self.assertLess(report.mae, 0.15)


class TestAblationVariants(unittest.TestCase):
    def test_resolve_names_and_groups(self):
        self.assertEqual(resolve_variants(["baseline, full"]), ["baseline", "full"])
        self.assertEqual(resolve_variants(["W/O Shuffle"]), ["w/o shuffle"])
        self.assertEqual(resolve_variants(["pairwise", "+ktm+swsam"]), GROUPS["pairwise"])

    def test_unknown_and_empty(self):
        with self.assertRaises(ConfigError):
            resolve_variants(["baseline", "w/o magic"])
        with self.assertRaises(ConfigError):
            resolve_variants([" , "])

    def test_every_variant_builds(self):
        cfg = resolve_config()
        for name in VARIANTS:
            with self.subTest(variant=name):
                variant_config(cfg, name)

    def test_variant_config(self):
        cfg = variant_config(resolve_config(), "baseline", seed=5)
        self.assertEqual((cfg.level1_attention, cfg.level4_attention, cfg.ktm), ("none", "none", False))
        self.assertEqual(cfg.seed, 5)
        self.assertEqual(variant_config(cfg, "w/ sge").attention_variant, "sge")

    def test_deltas_against_baseline(self):
        rows = with_deltas([
            AblationRow("baseline", MetricReport(mae=0.3, f_adp=0.4), 0.9, 1.0),
            AblationRow("full", MetricReport(mae=0.2, f_adp=0.6), 0.7, 1.0),
        ])
        self.assertIsNone(rows[0].delta)
        self.assertAlmostEqual(rows[1].delta["mae"], -0.1)
        self.assertAlmostEqual(rows[1].delta["f_adp"], 0.2)
        self.assertIn("delta", rows[1].to_dict())

    def test_no_baseline_no_deltas(self):
        rows = with_deltas([AblationRow("full", MetricReport(), 0.5, 1.0)])
        self.assertIsNone(rows[0].delta)

    def test_format_delta(self):
        self.assertIn("green", format_delta(-0.01, lower_is_better=True))
        self.assertIn("red", format_delta(-0.01))
        self.assertIn("same", format_delta(1e-6))

    def test_delta_signs_follow_metric_polarity(self):
        cfg = tiny_config(epochs=3, lr="1e-3")
        samples = load_dataset(cfg)
        baseline, full = run_ablation(cfg, ["baseline", "full"], samples)
        again = run_ablation(cfg, ["baseline", "full"], samples)[1]
        self.assertEqual(full.delta, again.delta)
        for key, value in full.report.scalars().items():
            with self.subTest(metric=key):
                difference = value - getattr(baseline.report, key)
                self.assertEqual(full.delta[key], difference)
                text = format_delta(full.delta[key], lower_is_better=key == "mae")
                if abs(difference) < 5e-5:
                    self.assertIn("same", text)
                elif (difference < 0) == (key == "mae"):
                    self.assertIn("green", text)
                else:
                    self.assertIn("red", text)

    def test_format_delta_polarity(self):
        self.assertIn("green", format_delta(-0.02, lower_is_better=True))
        self.assertIn("red", format_delta(0.02, lower_is_better=True))
        self.assertIn("green", format_delta(0.02))
        self.assertTrue(format_delta(0.02).startswith("[green]+"))

    @unittest.skipUnless(SLOW, "set GELENET_SLOW=1 for the seed-averaged ablation")
    def test_full_model_not_below_baseline(self):
        cfg = resolve_config(preset="desk", overrides={"epochs": "150", "lr": "1e-3"})
        rows = run_ablation(cfg, ["baseline", "full"], load_dataset(cfg), repeats=3)
        self.assertEqual(rows[1].seeds, [0, 1, 2])
        self.assertGreaterEqual(rows[1].report.f_adp, rows[0].report.f_adp)
        self.assertGreaterEqual(rows[1].delta["f_adp"], 0.0)

    def test_run_single_variant(self):
        cfg = tiny_config()
        rows = run_ablation(cfg, ["baseline"], load_dataset(cfg))
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0].seeds, [0])
        self.assertIsNone(rows[0].delta)
        self.assertTrue(np.isfinite(rows[0].final_loss))

    def test_run_with_repeats(self):
        cfg = tiny_config()
        announced = []
        rows = run_ablation(cfg, ["baseline", "full"], load_dataset(cfg), repeats=2,
                            on_variant=lambda name, i, n: announced.append((name, i, n)))
        self.assertEqual(announced, [("baseline", 1, 2), ("full", 2, 2)])
        self.assertEqual(rows[1].seeds, [0, 1])
        self.assertEqual(set(rows[1].delta), set(rows[1].report.scalars()))


if __name__ == "__main__":
    unittest.main()
