"""Line-image text recognition with temporal dropout regularization."""

__version__ = "0.1.0"
