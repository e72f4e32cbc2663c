"""Graph rewiring, physics-aware embeddings and energy/force heads for
adsorbate-catalyst graph learning, on a small numpy autodiff engine."""

__version__ = "0.1.0"
