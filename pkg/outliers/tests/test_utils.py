from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from outliers.utils import parse_grid, round_half_up, trim_count


class TestUtils(SimpleTestCase):
    def test_round_half_up(self):
        self.assertEqual(round_half_up(2.5), 3)
        self.assertEqual(round_half_up(0.5), 1)
        self.assertEqual(round_half_up(1.49), 1)
        self.assertEqual(round_half_up(4.0), 4)

    def test_default_grid(self):
        grid = parse_grid("0.10:0.95:0.01")
        self.assertEqual(len(grid), 86)
        self.assertEqual(grid[0], 0.1)
        self.assertEqual(grid[1], 0.11)
        self.assertEqual(grid[-1], 0.95)

    def test_invalid_grid(self):
        for text in ("0.1:0.9", "a:b:c", "0.9:0.1:0.1", "0.1:0.9:0"):
            with self.assertRaises(ValueError):
                parse_grid(text)

    def test_trim_count(self):
        self.assertEqual(trim_count(100, 0.1), 10)
        self.assertEqual(trim_count(5, 0.2), 1)
        self.assertEqual(trim_count(12, 0.1), 1)
        self.assertEqual(trim_count(10, 0.0), 0)

    def test_trim_count_rejects_half(self):
        with self.assertRaises(ValidationError):
            trim_count(10, 0.5)
        with self.assertRaises(ValidationError):
            trim_count(10, -0.1)
