"""Nested-block self-attention for segmentation on synthetic CT phantoms.

Modules: ``tensor`` (reverse-mode autograd), ``attention`` (full and
nested-block self-attention, relative logits), ``cost`` (FLOP ledger),
``backbone`` (TinyUnet and training), ``phantom`` (synthetic data),
``metrics`` (geometric and dose metrics) and ``cli``.
"""

__version__ = "0.1.0"
