"""Toolkit for match-vs-mismatch decoding of video stimuli from EEG recordings.

Pipeline stages, one module each:

- :mod:`eegmatch.core` - data model, manifests, raw float32 array files
- :mod:`eegmatch.preprocess` - notch / band-pass filtering and amplitude scaling
- :mod:`eegmatch.sampling` - segment enumeration, imposter pairing, subject splits
- :mod:`eegmatch.modelzoo` - dual-branch encoders with a per-channel cosine head
- :mod:`eegmatch.training` - Adam training loop with plateau schedule and early stop
- :mod:`eegmatch.analysis` - offset sweeps, channel activation maps, hand-crafted
  band features, silhouette scores, report export
- :mod:`eegmatch.synthgen` - synthetic EEG/video corpora with a planted response
- :mod:`eegmatch.cli` - command line entry point tying the stages together
"""

__version__ = "0.1.0"
