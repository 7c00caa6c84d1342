import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from diffcore.errors import ShapeError
from diffcore.graph import Tensor

logger = logging.getLogger(__name__)

PARAM_DTYPE = np.float32


class ParamStore:
    """
    Named parameter arrays plus per-parameter Adam state. Arrays are owned by
    the store and updated in place; leaves() wraps them as graph inputs for
    one forward/backward pass.
    """

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    def add(self, name: str, array: np.ndarray):
        if name in self.params:
            raise KeyError(f"Parameter {name} already exists")
        array = np.array(array, copy=True)
        self.params[name] = array
        self.first_moment[name] = np.zeros_like(array)
        self.second_moment[name] = np.zeros_like(array)
        self.steps[name] = 0

    def uniform(self, name: str, shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator,
                dtype=PARAM_DTYPE):
        """Fan-in scaled uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        bound = 1.0 / np.sqrt(fan_in)
        self.add(name, rng.uniform(-bound, bound, size=shape).astype(dtype))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: Optional[str] = None) -> List[str]:
        names = sorted(self.params)
        if prefix is None:
            return names
        return [n for n in names if n.startswith(prefix)]

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def leaves(self, names: Optional[Iterable[str]] = None, requires_grad: bool = True) -> Dict[str, Tensor]:
        selected = set(self.params if names is None else names)
        return {name: Tensor(array, requires_grad=requires_grad and name in selected, name=name)
                for name, array in self.params.items()}

    def copy(self, prefixes: Optional[Iterable[str]] = None, reset_state: bool = False) -> "ParamStore":
        other = ParamStore()
        for name in self.names():
            if prefixes is not None and not any(name.startswith(p) for p in prefixes):
                continue
            other.add(name, self.params[name])
            if not reset_state:
                other.first_moment[name] = self.first_moment[name].copy()
                other.second_moment[name] = self.second_moment[name].copy()
                other.steps[name] = self.steps[name]
        return other

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore()
        for name in self.names():
            other.add(name, self.params[name].astype(dtype))
        return other

    def check_shapes(self, expected: Dict[str, Tuple[int, ...]]):
        for name, shape in expected.items():
            if name not in self.params:
                raise ShapeError(f"Missing parameter {name}")
            if self.params[name].shape != tuple(shape):
                raise ShapeError(f"Parameter {name} has shape {self.params[name].shape}, expected {tuple(shape)}")

    def to_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        arrays = {}
        for name in self.names():
            arrays[f"{prefix}{name}"] = self.params[name]
            arrays[f"{prefix}adam.m.{name}"] = self.first_moment[name]
            arrays[f"{prefix}adam.v.{name}"] = self.second_moment[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], steps: Dict[str, int], prefix: str = "") -> "ParamStore":
        store = cls()
        for key in sorted(arrays):
            if not key.startswith(prefix):
                continue
            name = key[len(prefix):]
            if name.startswith("adam."):
                continue
            store.add(name, arrays[key])
            store.first_moment[name] = arrays[f"{prefix}adam.m.{name}"].copy()
            store.second_moment[name] = arrays[f"{prefix}adam.v.{name}"].copy()
            store.steps[name] = int(steps.get(name, 0))
        return store
