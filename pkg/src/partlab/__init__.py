"""Human-in-the-loop hierarchical active labeling for fine-grained 3D parts."""

__version__ = "0.1.0"
