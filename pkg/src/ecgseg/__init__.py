"""ECG delineation toolkit.

Pipeline pieces: spline resampling (signal), LUDB-style WFDB parsing
(wfdb), a from-scratch 1-D autodiff engine (autodiff), the UNet-like
segmentation network (unet), the training protocol (train), argmax/segment
postprocessing (delineate), the tolerance-matching evaluation harness
(evaluate), SVG rendering (render), and the CLI (cli).
"""

__version__ = "0.1.0"
