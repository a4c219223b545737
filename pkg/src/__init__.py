"""fusebox: detection-ensemble fusion, test-time augmentation and COCO-style evaluation."""

__version__ = "1.0.0"
