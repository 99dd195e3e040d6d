"""Categorical design spaces: dimensions, points, and the policy output layout.

A space is an ordered list of named dimensions, each with an ordered list of
choice labels. The layout maps each dimension onto a contiguous segment of the
policy network's flat output vector.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, ParseError


@dataclass(frozen=True)
class Dimension:
    name: str
    choices: tuple[str, ...]

    def __post_init__(self):
        if not self.name:
            raise ParseError("dimension with empty name")
        if len(self.choices) < 1:
            raise ParseError(f"dimension {self.name!r} has no choices")
        if len(set(self.choices)) != len(self.choices):
            raise ParseError(f"dimension {self.name!r} has duplicate choice labels")

    @property
    def cardinality(self) -> int:
        return len(self.choices)


@dataclass(frozen=True)
class OutputLayout:
    """Per-dimension (offset, length) segments of the flat policy output."""

    segments: tuple[tuple[int, int], ...]

    @property
    def total_width(self) -> int:
        off, length = self.segments[-1]
        return off + length


class DesignSpace:
    """Immutable ordered collection of categorical dimensions."""

    def __init__(self, name: str, dimensions: Sequence[Dimension]):
        dims = tuple(dimensions)
        if not dims:
            raise ParseError("a design space needs at least one dimension")
        seen: set[str] = set()
        for d in dims:
            if d.name in seen:
                raise ParseError(f"duplicate dimension name {d.name!r}")
            seen.add(d.name)
        self.name = name
        self.dimensions = dims

    @property
    def num_dimensions(self) -> int:
        return len(self.dimensions)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(d.cardinality for d in self.dimensions)

    @property
    def total_width(self) -> int:
        return sum(self.cardinalities)

    def space_size(self) -> int:
        """Exact number of distinct design points (Python bigint)."""
        n = 1
        for c in self.cardinalities:
            n *= c
        return n

    def output_layout(self) -> OutputLayout:
        segments = []
        offset = 0
        for c in self.cardinalities:
            segments.append((offset, c))
            offset += c
        return OutputLayout(tuple(segments))

    def validate_point(self, indices: Sequence[int]) -> tuple[int, ...]:
        idx = tuple(int(i) for i in indices)
        if len(idx) != self.num_dimensions:
            raise ConfigurationError(
                f"design point has {len(idx)} indices, space has {self.num_dimensions} dimensions"
            )
        for i, (x, d) in enumerate(zip(idx, self.dimensions)):
            if not 0 <= x < d.cardinality:
                raise ConfigurationError(
                    f"index {x} out of range for dimension {d.name!r} (cardinality {d.cardinality})"
                )
        return idx

    def point_to_wire(self, indices: Sequence[int]) -> dict[str, str]:
        """DesignPoint wire form: {dimension name: choice label}."""
        idx = self.validate_point(indices)
        return {d.name: d.choices[x] for d, x in zip(self.dimensions, idx)}

    def point_from_wire(self, wire: dict[str, str]) -> tuple[int, ...]:
        indices = []
        for d in self.dimensions:
            if d.name not in wire:
                raise ParseError(f"wire design point missing dimension {d.name!r}")
            label = wire[d.name]
            try:
                indices.append(d.choices.index(label))
            except ValueError:
                raise ParseError(
                    f"choice {label!r} not in dimension {d.name!r}"
                ) from None
        return tuple(indices)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dimensions": [
                {"name": d.name, "choices": list(d.choices)} for d in self.dimensions
            ],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=False)

    def content_hash(self) -> str:
        """Hex digest identifying the space; used by checkpoints and the evaluator handshake."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, DesignSpace) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"DesignSpace({self.name!r}, D={self.num_dimensions}, width={self.total_width})"


def parse_space(document: str | dict) -> DesignSpace:
    """Parse and validate a design-space document (JSON text or a dict)."""
    if isinstance(document, str):
        try:
            raw = json.loads(document)
        except json.JSONDecodeError as e:
            raise ParseError(f"design space is not valid JSON: {e}") from None
    else:
        raw = document
    if not isinstance(raw, dict):
        raise ParseError("design space document must be a JSON object")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ParseError("design space needs a non-empty string 'name'")
    dims_raw = raw.get("dimensions")
    if not isinstance(dims_raw, list) or not dims_raw:
        raise ParseError("design space needs a non-empty 'dimensions' list")
    dims = []
    for entry in dims_raw:
        if not isinstance(entry, dict) or "name" not in entry or "choices" not in entry:
            raise ParseError(f"malformed dimension entry: {entry!r}")
        dname = entry["name"]
        choices = entry["choices"]
        if not isinstance(choices, list) or not all(isinstance(c, str) for c in choices):
            raise ParseError(f"dimension {dname!r}: choices must be a list of strings")
        dims.append(Dimension(name=dname, choices=tuple(choices)))
    return DesignSpace(name=name, dimensions=dims)


def load_space(path: str | Path) -> DesignSpace:
    return parse_space(Path(path).read_text(encoding="utf-8"))


def serialize_space(space: DesignSpace, indent: int = 2) -> str:
    return json.dumps(space.to_dict(), indent=indent)


def uniform_space(name: str, dims: int, choices_per_dim: int) -> DesignSpace:
    """D dimensions with the same cardinality; labels are synthetic."""
    if dims < 1 or choices_per_dim < 1:
        raise ConfigurationError("uniform_space needs dims >= 1 and choices_per_dim >= 1")
    width = len(str(choices_per_dim - 1))
    return DesignSpace(
        name=name,
        dimensions=[
            Dimension(
                name=f"dim_{i:02d}",
                choices=tuple(f"c{j:0{width}d}" for j in range(choices_per_dim)),
            )
            for i in range(dims)
        ],
    )


def iter_points(space: DesignSpace) -> Iterable[tuple[int, ...]]:
    """Lexicographic enumeration of every design point."""
    cards = space.cardinalities
    point = [0] * len(cards)
    while True:
        yield tuple(point)
        i = len(cards) - 1
        while i >= 0:
            point[i] += 1
            if point[i] < cards[i]:
                break
            point[i] = 0
            i -= 1
        if i < 0:
            return


SOC_SPACE_RESOURCE = "soc_space.json"


def bundled_soc_space() -> DesignSpace:
    """The bundled SoC-like space (18 dimensions, 106 total choices)."""
    path = Path(__file__).parent / "data" / SOC_SPACE_RESOURCE
    return load_space(path)
