"""SGD with classical momentum, L2 weight decay folded into the gradient,
and the iteration-keyed step learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Collection, Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

from .errors import ShapeMismatchError
from .layers import Parameter

logger = logging.getLogger(__name__)


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: SgdState,
    no_decay: Collection[str] = (),
) -> None:
    """
    In-place update of every array in ``params``::

        v <- momentum * v + (g + weight_decay * w)
        w <- w - lr * v

    Names listed in ``no_decay`` skip the weight-decay term.
    """
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {g.shape}, parameter has {w.shape}")
        v = state.velocities.get(name)
        if v is None:
            v = state.velocities[name] = np.zeros_like(w)
        decay = 0.0 if name in no_decay else state.weight_decay
        v[...] = state.momentum * v + (g + decay * w)
        w -= state.lr * v


class SGD:
    """Optimizer bound to a model's named parameters."""

    def __init__(
        self,
        named_parameters: Iterable[Tuple[str, Parameter]],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        decay_batchnorm: bool = True,
    ) -> None:
        self.params: Dict[str, Parameter] = dict(named_parameters)
        self.state = SgdState(
            lr=lr,
            momentum=momentum,
            weight_decay=weight_decay,
            velocities={name: np.zeros_like(p.data) for name, p in self.params.items()},
        )
        self.no_decay = frozenset(
            name for name, p in self.params.items() if p.is_batchnorm and not decay_batchnorm
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        sgd_step(
            {name: p.data for name, p in self.params.items()},
            {name: p.grad for name, p in self.params.items()},
            self.state,
            self.no_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad[...] = 0

    def velocities(self) -> Dict[str, np.ndarray]:
        return self.state.velocities

    def load_velocities(self, velocities: Mapping[str, np.ndarray]) -> None:
        for name, v in self.state.velocities.items():
            if name not in velocities:
                raise KeyError(f"missing velocity for parameter {name}")
            v[...] = np.asarray(velocities[name]).reshape(v.shape)


def learning_rate_at(
    iteration: int,
    base_lr: float,
    drops: Sequence[int],
    factor: float = 0.1,
) -> float:
    """Base rate multiplied by ``factor`` once for every drop iteration already reached."""
    passed = sum(1 for d in drops if iteration >= d)
    return base_lr * factor**passed
