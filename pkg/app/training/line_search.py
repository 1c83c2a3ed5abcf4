from typing import Any, Callable, Optional, Tuple

from app.utils.exceptions import NoDescent

MAX_HALVINGS = 30
# Increases this small relative to the objective are treated as rounding noise
ROUNDING_SLACK = 1e-12


def halving_search(evaluate: Callable[[float], Tuple[float, Any]], value: float, context: str,
                   t0: float = 1.0, max_halvings: int = MAX_HALVINGS) -> Optional[Tuple[float, float, Any]]:
    """
    Halve a step length until the objective does not increase.

    Args:
        evaluate: Maps a step length t to (objective, payload)
        value: Objective at the current iterate
        context: Description used in the NoDescent message
        t0: First step length tried
        max_halvings: Number of step lengths tried

    Returns:
        (t, new_value, payload) for the accepted step, or None when the best
        candidate is above ``value`` only by rounding noise (the iterate is stationary)

    Raises:
        NoDescent: when every candidate increases the objective
    """
    t = t0
    new_value = value
    for _ in range(max_halvings):
        new_value, payload = evaluate(t)
        if new_value <= value:
            return t, new_value, payload
        t *= 0.5
    if new_value - value <= ROUNDING_SLACK * abs(value):
        return None
    raise NoDescent(f"{context}: objective increased after {max_halvings} step halvings")
