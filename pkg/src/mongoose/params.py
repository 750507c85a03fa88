"""Flat parameter storage with a named segment layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ParamVector"]


@dataclass
class ParamVector:
    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layout = tuple((str(n), tuple(int(s) for s in shp)) for n, shp in self.layout)
        expected = sum(int(np.prod(shp)) for _, shp in self.layout)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ValueError(
                f"values have {self.values.size} entries but layout needs {expected}"
            )

    @classmethod
    def from_segments(cls, segments: dict[str, np.ndarray]) -> ParamVector:
        layout = tuple((name, np.shape(arr)) for name, arr in segments.items())
        values = np.concatenate([np.ravel(np.asarray(a, dtype=np.float64))
                                 for a in segments.values()]) if segments else np.zeros(0)
        return cls(values, layout)

    def segments(self) -> dict[str, np.ndarray]:
        """Reshaped views into ``values`` (writes go through)."""
        out, start = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = self.values[start:start + size].reshape(shape)
            start += size
        return out

    def zeros_like(self) -> ParamVector:
        return ParamVector(np.zeros_like(self.values), self.layout)

    def copy(self) -> ParamVector:
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values: np.ndarray) -> ParamVector:
        return ParamVector(values, self.layout)

    def coordinate_name(self, index: int) -> str:
        start = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            if index < start + size:
                local = np.unravel_index(index - start, shape) if shape else ()
                return f"{name}[{','.join(str(int(i)) for i in local)}]"
            start += size
        raise IndexError(index)

    def __len__(self) -> int:
        return self.values.size
