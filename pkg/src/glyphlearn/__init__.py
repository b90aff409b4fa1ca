"""glyphlearn: neuro-symbolic generative modeling of stroke-based glyphs.

A library for learning an autoregressive prior over character drawings,
inferring stroke programs from binary images, and running one-shot
classification, parsing, exemplar generation, concept generation, and
marginal-likelihood estimation on top of the inferred programs.
"""

__version__ = "0.1.0"
