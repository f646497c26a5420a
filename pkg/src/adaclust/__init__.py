"""Domain generalization on aggregated data via pseudo-domain clustering.

Subpackages follow the pipeline order: ``datagen`` synthesizes multi-domain
data, ``spectral`` isolates the domain-relevant spectrum window, ``clustering``
discovers pseudo-domains, ``net`` provides the toy differentiable models,
``pipeline`` runs adaptive training/inference and the leave-one-domain-out
harness, ``theory`` numerically checks the accompanying guarantees, and
``cli`` ties everything into a command line tool.
"""

__version__ = "0.1.0"
