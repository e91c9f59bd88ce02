import unittest

from obodyhand import ObodyhandError, GradCheckFailure
from obodyhand.gradcheck import grad_check, GradCheckError, TARGETS
from obodyhand.models import VARIANTS


class GradCheckTest(unittest.TestCase):
    def test_square(self):
        report = grad_check("square")
        self.assertLess(report.max_error, 1e-8)
        self.assertTrue(report.passed)
        self.assertEqual(["input:x"], list(report.errors))

    def test_relu_kink_is_excluded(self):
        report = grad_check("relu", seed=3)
        self.assertGreaterEqual(report.excluded["input:x"], 1)
        self.assertLess(report.max_error, 1e-6)

    def test_every_target_passes(self):
        for target in TARGETS:
            with self.subTest(target=target):
                report = grad_check(target, seed=1)
                self.assertLess(report.max_error, 1e-4, str(report))
                self.assertTrue(all(name.startswith(("input:", "param")) for name in report.errors))

    def test_variants_are_registered(self):
        for variant in VARIANTS:
            self.assertIn(variant, TARGETS)

    def test_report(self):
        report = grad_check("fuse_logits_avg", tolerance=1e-3)
        d = report.to_dict()
        self.assertEqual("fuse_logits_avg", d["target"])
        self.assertEqual(1e-3, d["tolerance"])
        self.assertTrue(d["passed"])
        self.assertIn("passed", str(report).splitlines()[-1])

    def test_tiny_tolerance_fails(self):
        self.assertFalse(grad_check("softmax_attention", tolerance=0.).passed)

    def test_unknown_target(self):
        with self.assertRaises(GradCheckError):
            grad_check("transformer")

    def test_failure_category(self):
        self.assertTrue(issubclass(GradCheckFailure, ObodyhandError))
        self.assertEqual("gradcheck", GradCheckFailure("too large").category)
