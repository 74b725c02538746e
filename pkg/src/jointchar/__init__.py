"""Joint PCA + t-SNE characterization of images and hyperspectral cubes."""

__version__ = "0.1.0"
