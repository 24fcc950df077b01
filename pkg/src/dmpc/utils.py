"""
dmpc/utils.py - Small Helpers

Word counting, canonical edge ordering and fixed-point weights. Everything
here is pure and shared by the runtime and the algorithm modules.
"""

from __future__ import annotations

import math
from decimal import Decimal, InvalidOperation
from typing import Any, Final

# Scale used when none is configured: three decimal places.
DEFAULT_WEIGHT_SCALE: Final[int] = 1000


def count_words(value: Any) -> int:
    """
    Count the machine words a stored value occupies.

    One vertex ID, tour index, weight, flag or machine ID is one word.
    ``None`` marks an absent optional field and costs nothing. Tuples and
    lists (NamedTuples included) cost the sum of their items.

    Example:
        >>> count_words((3, None, (1, 2)))
        3
    """
    if value is None:
        return 0
    if isinstance(value, (tuple, list)):
        return sum(count_words(item) for item in value)
    return 1


def canonical_edge(u: int, v: int) -> tuple[int, int]:
    """Return the edge as ``(min, max)``."""
    return (u, v) if u < v else (v, u)


def ceil_sqrt(value: float) -> int:
    """ceil(√value) without floating point surprises on perfect squares."""
    if value <= 0:
        return 0
    root = math.isqrt(int(math.ceil(value)))
    return root if root * root >= value else root + 1


def to_fixed(weight: str | float | int, scale: int = DEFAULT_WEIGHT_SCALE) -> int:
    """
    Convert a decimal weight to a fixed-point integer word.

    Strings are parsed with Decimal so "1.05" becomes exactly 1050 at the
    default scale. Values are rounded half-up to the nearest unit.

    Raises:
        ValueError: If the text is not a number.
    """
    try:
        exact = Decimal(str(weight)) * scale
    except InvalidOperation as exc:
        raise ValueError(f"invalid weight {weight!r}") from exc
    return int(exact.to_integral_value(rounding="ROUND_HALF_UP"))


def from_fixed(word: int, scale: int = DEFAULT_WEIGHT_SCALE) -> str:
    """Render a fixed-point word as a decimal string with no trailing zeros."""
    text = format(Decimal(word) / scale, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text
