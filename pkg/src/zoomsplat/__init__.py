"""Progressive zoom-in 3D Gaussian splatting with a continuous level-of-detail hierarchy.

The package reconstructs a scene from posed low-resolution images, then
iteratively magnifies it: render the current level, warp neighboring views
with reconstructed depth, enhance through a pluggable super-resolution
stage, and deposit the new detail into an expandable LoD hierarchy that
renders alias-free across scales.
"""

__version__ = "0.1.0"
