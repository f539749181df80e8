from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Acquisition
from .helmholtz import Discretization, point_sources, sampling_operator
from .physics import DEFAULT_LAW, AttenuationLaw


@dataclass
class SurveyData:
    """Observed data ``data[s, f, r]`` for every source, frequency and receiver.

    ``wavelet[f]`` is the complex source spectrum at ``frequencies[f]`` (Hz);
    the source term of shot ``s`` is ``wavelet[f] / (dx dz)`` at its node.
    """

    acquisition: Acquisition
    frequencies: np.ndarray
    data: np.ndarray
    wavelet: np.ndarray | None = None
    law: AttenuationLaw = DEFAULT_LAW
    disc: Discretization = field(default_factory=Discretization)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.frequencies.ndim != 1 or np.any(self.frequencies <= 0):
            raise ValueError("frequencies must be a 1-D list of positive values")
        self.data = np.asarray(self.data, dtype=complex)
        if self.wavelet is None:
            self.wavelet = np.ones(len(self.frequencies), dtype=complex)
        self.wavelet = np.asarray(self.wavelet, dtype=complex)
        acq = self.acquisition
        expected = (acq.n_sources, len(self.frequencies), acq.n_receivers)
        if self.data.shape != expected:
            raise ValueError(f"data has shape {self.data.shape}, expected {expected}")
        if self.wavelet.shape != (len(self.frequencies),):
            raise ValueError("wavelet needs one value per frequency")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains non-finite values")

    @property
    def grid(self):
        return self.acquisition.grid

    def omega(self, f_index: int) -> float:
        return 2.0 * np.pi * float(self.frequencies[f_index])

    def frequency_index(self, freq: float) -> int:
        hits = np.flatnonzero(np.isclose(self.frequencies, freq, rtol=1e-9, atol=0.0))
        if hits.size == 0:
            raise KeyError(f"no observed data at {freq} Hz")
        return int(hits[0])

    def sources(self, f_index: int) -> np.ndarray:
        """Padded source vectors, shape (n_pad, S)."""
        return point_sources(self.grid, self.acquisition.source_nodes, self.wavelet[f_index])

    def sampler(self):
        return sampling_operator(self.grid, self.acquisition.receiver_nodes, padded=True)

    @property
    def source_scale(self) -> float:
        """Factor that brings max |b| to one."""
        g = self.grid
        return g.dx * g.dz / float(np.max(np.abs(self.wavelet)))

    def subset(self, freqs) -> "SurveyData":
        idx = [self.frequency_index(f) for f in freqs]
        return SurveyData(self.acquisition, self.frequencies[idx], self.data[:, idx, :],
                          self.wavelet[idx], self.law, self.disc)
