"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInput(ValueError):
    """Input points or queries are malformed (wrong shape, non-finite, bad text)."""


class DuplicatePoints(InvalidInput):
    """Two input points coincide, so the empty ball of each would be a single point.

    ``pair`` holds the indices of one offending pair, smallest first.
    """

    def __init__(self, pair: tuple[int, int]):
        self.pair = (min(pair), max(pair))
        super().__init__(f"duplicate points at indices {self.pair[0]} and {self.pair[1]}")


class SpreadTooLarge(InvalidInput):
    """Distinct input points collapse onto one grid cell after normalization.

    The coordinate spread exceeds what the fixed-precision grid can resolve,
    either globally (ratio of extent to closest pair) or via a ball so small
    that its covering level would exceed the grid depth.
    """
