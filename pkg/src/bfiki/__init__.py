"""Offline BFI keystroke-eavesdropping toolkit.

Pipeline stages, each independently usable: pcap/beamforming-report parsing
(`pcap`, `frames`), victim windowing (`orchestrator`), scalar series
extraction (`series`), sparse recovery (`sra`), CFAR segmentation
(`segmenter`), adversarial keystroke inference and password ranking
(`inference`), synthetic data generation (`synth`), and the end-to-end
`pipeline` driven by the `cli`.
"""

from .config import PipelineConfig, load_config
from .errors import BfikiError
from .frames import BfiFrame, Codebook, parse_action_noack, reconstruct_v
from .inference import KiModel, classify, rank_passwords, top_n_accuracy
from .orchestrator import AttackWindow, VictimProfile, clip_frames, detect_windows
from .pcap import CaptureRecord, read_pcap
from .segmenter import (KeystrokeSegment, SegmentationParams, cfar_peaks,
                        segment, select_topk)
from .series import BfiSeries, Viability, resample, viability_check
from .sra import SraModel, TcnAeConfig, gen_poisson_mask, recover, train_sra
from .synth import LabeledSeries, SynthConfig, synth_dataset, synth_keystroke_series

__version__ = "0.1.0"
