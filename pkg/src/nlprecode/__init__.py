"""Massive-MIMO precoding under nonlinear power amplifiers.

Modules: ``channel`` (datasets), ``pa`` (amplifier models and fits),
``bussgang`` (analytic and Monte-Carlo link metrics), ``precoders`` (MRT, ZF,
Z3RO), ``dab`` (gradient-ascent beamforming), ``grad`` (reverse-mode engine),
``gnn`` (edge GNN precoder), ``analysis`` (patterns, power, FLOPs) and ``cli``.
"""

__version__ = "0.1.0"
