"""Active-learning selection engine for object detection datasets.

Scores unlabeled images by weighted classification and regression
uncertainty, runs the pool-based selection loop against a simulated
detector, and evaluates learning curves with VOC-style mAP.
"""

__version__ = "0.1.0"
