"""Augmentation-free training via polar-coordinate gradient weighting.

Core pieces: a small reverse-mode tape (diffcore), optimal-transport
machinery with exact oracles (transport), three sentence losses (losses),
the polar perturbation objective and its gradient-weight rules (objective),
weighted SGD plus a convergence harness (optimizer), a toy encoder-decoder
(seq2seq), synthetic transduction tasks with a token-noise augmentation
baseline (corpus), and an experiment CLI (cli).
"""

__version__ = "0.1.0"
