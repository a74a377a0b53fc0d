from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator


class Mlp(BaseModel):
    """Dense network: ReLU hidden layers, linear output. Weight i has shape (sizes[i], sizes[i+1])"""

    sizes: Tuple[int, ...] = Field(..., description="Layer widths from input to output")
    weights: List[np.ndarray] = Field(..., description="Row-major weight matrices")
    biases: List[np.ndarray] = Field(..., description="Bias vectors")

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValueError("one weight matrix and one bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has shapes {w.shape}/{b.shape}, expected {(self.sizes[i], self.sizes[i + 1])}")
        return self

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_size(self) -> int:
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        """Flat parameter list in file order: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def copy(self) -> "Mlp":
        return Mlp(
            sizes=self.sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


class AdamState(BaseModel):
    """First and second moment estimates for every parameter tensor"""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = Field(default_factory=list)
    v: List[np.ndarray] = Field(default_factory=list)

    class Config:
        arbitrary_types_allowed = True
