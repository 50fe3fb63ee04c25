"""Twin convolutional networks for image-splicing detection with feature transfer."""
__version__ = "0.1.0"
