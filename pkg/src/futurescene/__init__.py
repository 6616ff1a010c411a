"""Deterministic future urban scene generation.

Solves each vehicle's 3D pose from 2D keypoints, moves it along a lifted
or user-drawn ground trajectory, renders its novel view geometrically and
composites it onto a static background. Includes the evaluation metrics
(MSE, SSIM, FID, IS) with a tight-crop protocol.
"""

__version__ = "0.1.0"
