"""Reconstruct chest SCG/GCG waveforms and fiducial timings from in-ear heart sounds."""

__version__ = "0.1.0"

from .signal import BandpassSpec, Modality, SampledSignal, Spectrum  # noqa: E402

__all__ = ["BandpassSpec", "Modality", "SampledSignal", "Spectrum", "__version__"]
