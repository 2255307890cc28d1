"""
Utility helpers for the Entropic-PNP solver.

Responsibilities:
    - Schedule parsing: Convert compact dt_max strings (e.g., '2@250,200') to
      (until_time, value) pairs.
    - List parsing: Turn '8,16,32' style CLI values into integer/float lists.
    - Rates: Successive log2 convergence rates from an error sequence.
    - Formatting: Round-trip-stable float text for CSV output.

All helpers are numpy-light and safe to reuse across services and the CLI.
"""

import math
from typing import Optional, Sequence

ROUNDOFF_ERROR = 1e-12
NO_RATE = "—"


# ----------------------------------------------------------------------
# Schedule String Parser
# ----------------------------------------------------------------------
def parse_schedule(text) -> tuple:
    """
    Parse a dt_max schedule like '2@250,200' into ((250.0, 2.0), (inf, 200.0)).

    Each comma-separated entry is 'value@until' (value applies for t < until);
    the last entry may omit '@until' and then applies forever.
    A bare number is a constant schedule.

    Raises:
        ValueError: On malformed entries or non-increasing switch times.
    """
    if isinstance(text, (int, float)):
        return ((math.inf, float(text)),)
    if not text or not str(text).strip():
        raise ValueError("Empty dt_max schedule")
    pairs = []
    last_until = -math.inf
    for raw in str(text).split(","):
        entry = raw.strip()
        if "@" in entry:
            value_str, until_str = entry.split("@", 1)
            until = float(until_str)
        else:
            value_str, until = entry, math.inf
        value = float(value_str)
        if value <= 0:
            raise ValueError(f"dt_max must be positive: {entry!r}")
        if until <= last_until:
            raise ValueError(f"Schedule switch times must increase: {entry!r}")
        pairs.append((until, value))
        last_until = until
    if pairs[-1][0] != math.inf:
        raise ValueError("Last schedule entry must not have an '@until' part")
    return tuple(pairs)


def format_schedule(schedule: Sequence) -> str:
    """Inverse of parse_schedule."""
    parts = []
    for until, value in schedule:
        parts.append(f"{value!r}" if math.isinf(until) else f"{value!r}@{until!r}")
    return ",".join(parts)


# ----------------------------------------------------------------------
# List Parsers
# ----------------------------------------------------------------------
def parse_int_list(text: str) -> list:
    """'8,16,32' -> [8, 16, 32]. Raises ValueError on bad input."""
    if not text:
        raise ValueError("Empty list")
    return [int(tok) for tok in str(text).split(",") if tok.strip()]


def parse_float_list(text: Optional[str]) -> list:
    """'1,10.5' -> [1.0, 10.5]; None or '' -> []."""
    if not text:
        return []
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


# ----------------------------------------------------------------------
# Convergence Rates
# ----------------------------------------------------------------------
def convergence_rates(errors: Sequence[float], sizes: Sequence[int]) -> list:
    """
    Observed orders between successive refinements.

    Args:
        errors: Error per mesh.
        sizes: 1/h per mesh (same length, increasing).

    Returns:
        list: NO_RATE for the first entry and wherever either error is at
              round-off level; otherwise log(e_prev/e)/log(n/n_prev).
    """
    rates = [NO_RATE]
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 <= ROUNDOFF_ERROR or e1 <= ROUNDOFF_ERROR:
            rates.append(NO_RATE)
            continue
        rates.append(math.log(e0 / e1) / math.log(sizes[i] / sizes[i - 1]))
    return rates


# ----------------------------------------------------------------------
# Float Formatting
# ----------------------------------------------------------------------
def format_float(value) -> str:
    """17 significant digits, enough for an exact round trip of a double."""
    return format(float(value), ".17g")
