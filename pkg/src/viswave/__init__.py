"""viswave: desk-scale co-simulation of vision-aided mmWave links.

Three pipelines over one synthetic world: look-ahead received-power prediction
from depth frames and RSS history, RL-based predictive handover, and RF-aided
inpainting of occluded depth images.
"""

__version__ = "0.1.0"
