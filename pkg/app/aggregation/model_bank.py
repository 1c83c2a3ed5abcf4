from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from app.utils.exceptions import EmptyBank, InvalidInput

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass
class ModelBank:
    """
    Ordered, named collection of black-box predictors sharing one input domain.

    Calling the bank on N inputs returns the (N, n) matrix whose column k holds
    model k's predictions, i.e. the vectors M(x^i) stacked row-wise.
    """

    names: List[str] = field(default_factory=list)
    predictors: List[Predictor] = field(default_factory=list)

    def __post_init__(self):
        if len(self.names) != len(self.predictors):
            raise InvalidInput(f"{len(self.names)} names for {len(self.predictors)} predictors")
        if len(set(self.names)) != len(self.names):
            raise InvalidInput("model names must be unique")

    @classmethod
    def from_dict(cls, models: Dict[str, Predictor]) -> "ModelBank":
        return cls(list(models.keys()), list(models.values()))

    def add(self, name: str, predictor: Predictor):
        if name in self.names:
            raise InvalidInput(f"duplicate model name '{name}'")
        self.names.append(name)
        self.predictors.append(predictor)

    def __len__(self):
        return len(self.predictors)

    def __call__(self, X: Sequence) -> np.ndarray:
        if not self.predictors:
            raise EmptyBank("model bank has no models")
        columns = [np.asarray(predictor(X), dtype=float).reshape(-1) for predictor in self.predictors]
        lengths = {len(column) for column in columns}
        if len(lengths) != 1:
            raise InvalidInput(f"models returned different numbers of predictions: {sorted(lengths)}")
        return np.column_stack(columns)

    def subset(self, names: Sequence[str]) -> "ModelBank":
        """Return a bank restricted to ``names`` in the given order."""
        missing = [name for name in names if name not in self.names]
        if missing:
            raise InvalidInput(f"unknown models: {missing}")
        return ModelBank(list(names), [self.predictors[self.names.index(name)] for name in names])
