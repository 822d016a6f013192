"""Vector-quantized prosody representation at desk scale.

Submodules:
  dsp          waveform -> mel spectrogram, MFCC, YIN pitch track
  metrics      GPE, FFE, MCD (optionally DTW-aligned), factor correlation
  vq           codebook, nearest-neighbour quantizer, VQ losses, update counter
  net          conv/GRU prosody encoder and mirrored toy decoder with backward
  training     synthetic corpus, training loop, disentanglement experiments
  persistence  binary array container, checkpoints, corpus manifests
  cli          command-line entry point (``vqprosody``)
"""

__version__ = "0.1.0"
