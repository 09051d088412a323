"""
Ordered estimator state: block layout, nominal values and error-state retraction.

Blocks are kept in the order navigation | calibration | clones (newest first)
| features, so the blocks marginalized most often sit at the end.
"""

import copy
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from core.errors import DimensionMismatch, UnknownBlock
from core.quaternion import quat_boxplus, quat_to_rot, rotation_error

# kind -> (value dim, error dim, layout rank)
BLOCK_KINDS = {
    "imu": (16, 15, 0),
    "extrinsic": (7, 6, 1),
    "pose": (7, 6, 2),
    "feature": (3, 3, 3),
    "anchored_feature": (3, 3, 3),
}

NAV_BLOCK = "nav"
CALIB_BLOCK = "calib"

# Error-state offsets inside the navigation block
NAV_THETA = slice(0, 3)
NAV_POSITION = slice(3, 6)
NAV_VELOCITY = slice(6, 9)
NAV_GYRO_BIAS = slice(9, 12)
NAV_ACCEL_BIAS = slice(12, 15)
NAV_POSE = slice(0, 6)


def nav_value(q: np.ndarray, p: np.ndarray, v: np.ndarray,
              bg: Optional[np.ndarray] = None, ba: Optional[np.ndarray] = None) -> np.ndarray:
    """Pack a navigation block value [q, p, v, bg, ba]"""
    bg = np.zeros(3) if bg is None else bg
    ba = np.zeros(3) if ba is None else ba
    return np.concatenate([q, p, v, bg, ba]).astype(np.float64)


@dataclass
class StateBlock:
    """One named block of the state vector"""
    name: str
    kind: str
    value: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"Unknown block kind: {self.kind}")
        self.value = np.asarray(self.value, dtype=np.float64).copy()
        if self.value.shape != (BLOCK_KINDS[self.kind][0],):
            raise DimensionMismatch(
                f"Block {self.name} of kind {self.kind} expects {BLOCK_KINDS[self.kind][0]} values, "
                f"got {self.value.shape}")

    @property
    def err_dim(self) -> int:
        return BLOCK_KINDS[self.kind][1]

    @property
    def rank(self) -> int:
        return BLOCK_KINDS[self.kind][2]

    @property
    def has_orientation(self) -> bool:
        return self.kind in ("imu", "extrinsic", "pose")

    # Accessors for pose-carrying blocks
    @property
    def quaternion(self) -> np.ndarray:
        return self.value[0:4]

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.value[0:4])

    @property
    def position(self) -> np.ndarray:
        return self.value[4:7] if self.has_orientation else self.value

    @property
    def velocity(self) -> np.ndarray:
        return self.value[7:10]

    @property
    def gyro_bias(self) -> np.ndarray:
        return self.value[10:13]

    @property
    def accel_bias(self) -> np.ndarray:
        return self.value[13:16]

    def boxplus(self, dx: np.ndarray) -> "StateBlock":
        value = self.value.copy()
        if self.has_orientation:
            value[0:4] = quat_boxplus(value[0:4], dx[0:3])
            value[4:] += dx[3:]
        else:
            value += dx
        return StateBlock(self.name, self.kind, value, copy.deepcopy(self.meta))

    def boxminus(self, other: "StateBlock") -> np.ndarray:
        """Error dx with self = other (+) dx"""
        if self.kind != other.kind:
            raise DimensionMismatch(f"Cannot difference {self.kind} and {other.kind}")
        if self.has_orientation:
            dtheta = rotation_error(self.rotation, other.rotation)
            return np.concatenate([dtheta, self.value[4:] - other.value[4:]])
        return self.value - other.value


class StateVector:
    """
    Ordered collection of state blocks with error-state bookkeeping
    """

    def __init__(self, blocks: Optional[Iterable[StateBlock]] = None):
        self.blocks: List[StateBlock] = list(blocks) if blocks is not None else []
        self._check_order()

    def _check_order(self) -> None:
        ranks = [b.rank for b in self.blocks]
        if ranks != sorted(ranks):
            raise ValueError(f"State blocks out of order: {self.names}")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"Duplicate block names: {self.names}")

    @property
    def names(self) -> List[str]:
        return [b.name for b in self.blocks]

    @property
    def dim(self) -> int:
        return sum(b.err_dim for b in self.blocks)

    def __contains__(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def index(self, name: str) -> int:
        for i, block in enumerate(self.blocks):
            if block.name == name:
                return i
        raise UnknownBlock(f"No block named {name}")

    def block(self, name: str) -> StateBlock:
        return self.blocks[self.index(name)]

    def offset(self, name: str) -> int:
        offset = 0
        for block in self.blocks:
            if block.name == name:
                return offset
            offset += block.err_dim
        raise UnknownBlock(f"No block named {name}")

    def err_slice(self, name: str) -> slice:
        start = self.offset(name)
        return slice(start, start + self.block(name).err_dim)

    def err_columns(self, names: Iterable[str]) -> np.ndarray:
        cols = [np.arange(self.err_slice(n).start, self.err_slice(n).stop) for n in names]
        return np.concatenate(cols) if cols else np.zeros(0, dtype=int)

    def names_of_kind(self, *kinds: str) -> List[str]:
        return [b.name for b in self.blocks if b.kind in kinds]

    @property
    def clone_names(self) -> List[str]:
        """Clone blocks, newest first"""
        return self.names_of_kind("pose")

    @property
    def feature_names(self) -> List[str]:
        return self.names_of_kind("feature", "anchored_feature")

    def insertion_index(self, kind: str) -> int:
        """Position where a new block of ``kind`` goes (front of its group)"""
        rank = BLOCK_KINDS[kind][2]
        for i, block in enumerate(self.blocks):
            if block.rank >= rank:
                return i
        return len(self.blocks)

    def copy(self) -> "StateVector":
        return StateVector([StateBlock(b.name, b.kind, b.value, copy.deepcopy(b.meta)) for b in self.blocks])

    def with_block(self, block: StateBlock, position: Optional[int] = None) -> "StateVector":
        blocks = self.copy().blocks
        blocks.insert(len(blocks) if position is None else position, block)
        return StateVector(blocks)

    def without(self, names: Iterable[str]) -> "StateVector":
        names = set(names)
        for name in names:
            self.index(name)
        return StateVector([b for b in self.copy().blocks if b.name not in names])

    def replace_value(self, name: str, value: np.ndarray, meta: Optional[Dict[str, Any]] = None) -> "StateVector":
        out = self.copy()
        i = out.index(name)
        old = out.blocks[i]
        out.blocks[i] = StateBlock(old.name, old.kind, value, meta if meta is not None else old.meta)
        return out

    def boxplus(self, dx: np.ndarray) -> "StateVector":
        dx = np.asarray(dx, dtype=np.float64)
        if dx.shape != (self.dim,):
            raise DimensionMismatch(f"Error vector of size {dx.shape} for state of dimension {self.dim}")
        blocks, offset = [], 0
        for block in self.blocks:
            blocks.append(block.boxplus(dx[offset:offset + block.err_dim]))
            offset += block.err_dim
        return StateVector(blocks)

    def boxminus(self, other: "StateVector") -> np.ndarray:
        if self.names != other.names:
            raise DimensionMismatch("State layouts differ")
        return np.concatenate([a.boxminus(b) for a, b in zip(self.blocks, other.blocks)]) \
            if self.blocks else np.zeros(0)
