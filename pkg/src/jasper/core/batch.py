from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import sequence_mask


@dataclass
class PaddedBatch:
    """Right-padded feature sequences ``[B, C, T_max]`` with their valid lengths."""

    features: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.features.ndim != 3:
            raise ValueError(f"features must be [B, C, T], got shape {self.features.shape}")
        if len(self.lengths) != self.features.shape[0]:
            raise ValueError("one length per sequence required")
        if np.any(self.lengths > self.features.shape[2]) or np.any(self.lengths < 0):
            raise ValueError("lengths must lie in [0, T_max]")
        self.mask = sequence_mask(self.lengths, self.features.shape[2], self.features.dtype)

    @classmethod
    def from_list(cls, seqs: list[np.ndarray], dtype=np.float64) -> "PaddedBatch":
        """Pad a list of ``[C, T_i]`` arrays to the longest one."""
        t_max = max(s.shape[1] for s in seqs)
        out = np.zeros((len(seqs), seqs[0].shape[0], t_max), dtype=dtype)
        for i, s in enumerate(seqs):
            out[i, :, : s.shape[1]] = s
        return cls(out, np.array([s.shape[1] for s in seqs]))

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]
