"""Causal streaming speech enhancement with dynamic attention spans.

A small AEC/NS engine operating on 16 kHz audio: STFT front end, dual
encoders merged by causal cross-attention, repeated temporal-convolution +
grouped self-attention modules, and a decoder predicting a complex ratio
mask.  Every attention module can run with a fixed causal window or with a
per-frame predicted span that shrinks the window adaptively.
"""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
WINDOW_LEN = 320
FRAME_HOP = 160
DFT_SIZE = 320
NUM_BINS = DFT_SIZE // 2 + 1
