"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array or model dimensions do not agree."""


class EquivalenceError(RuntimeError):
    """Optimized and naive backends disagree beyond tolerance."""

    def __init__(self, max_error: float, index: int, tolerance: float):
        self.max_error = max_error
        self.index = index
        self.tolerance = tolerance
        super().__init__(
            f"backend mismatch: max relative error {max_error:.3e} at entry {index} "
            f"exceeds {tolerance:.1e}"
        )
