"""Guided discrete diffusion for molecular graphs.

Submodules: ``molgraph`` (graphs, SMILES, fingerprints, metrics),
``diffusion`` (noise process), ``denoiser`` and ``classifier`` (networks),
``guidance`` (guided sampling), ``inpaint`` (fragment constraints) and
``pipeline`` (CLI, checkpoints, reports).
"""
__version__ = "0.1.0"
