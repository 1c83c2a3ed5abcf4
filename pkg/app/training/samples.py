from dataclasses import dataclass

import numpy as np

from app.kernels.kernels import as_points
from app.utils.exceptions import InvalidInput


@dataclass(frozen=True)
class ErrorSamples:
    """
    Validation triples (x^i, M(x^i), Y^i).

    The error matrix e[i, k] = M_k(x^i) - Y^i is derived, never stored, so it
    always agrees with the model values and targets.
    """

    inputs: np.ndarray
    model_values: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = as_points(self.inputs)
        model_values = np.atleast_2d(np.asarray(self.model_values, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if not (len(inputs) == len(model_values) == len(targets)):
            raise InvalidInput(f"row counts disagree: {len(inputs)} inputs, "
                               f"{len(model_values)} model rows, {len(targets)} targets")
        if len(targets) == 0:
            raise InvalidInput("error samples are empty")
        if not (np.all(np.isfinite(model_values)) and np.all(np.isfinite(targets))):
            raise InvalidInput("model values and targets must be finite")
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'model_values', model_values)
        object.__setattr__(self, 'targets', targets)

    @property
    def errors(self) -> np.ndarray:
        return self.model_values - self.targets[:, None]

    @property
    def n_samples(self) -> int:
        return len(self.targets)

    @property
    def n_models(self) -> int:
        return self.model_values.shape[1]

    @classmethod
    def from_bank(cls, inputs, bank, targets) -> "ErrorSamples":
        """Evaluate a model bank on the inputs and pair the result with targets."""
        points = as_points(inputs)
        return cls(points, bank(points), targets)

    def permute_models(self, order) -> "ErrorSamples":
        return ErrorSamples(self.inputs, self.model_values[:, list(order)], self.targets)
