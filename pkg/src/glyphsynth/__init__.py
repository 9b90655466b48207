"""Few-shot glyph synthesis on a synthetic compositional corpus.

Pipeline: a conditional latent diffusion model with component-aware
cross-attention conditioning (stage A), one-step score distillation of that
model (stage B1), and cascaded style-guided super-resolution (stage B2),
plus corpus generation, reference-mapping, metric, and CLI plumbing.
"""

__version__ = "0.1.0"
