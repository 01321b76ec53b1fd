"""Shape-guided object inpainting at desk scale.

Fills an object-shaped hole in an image with a semantically coherent
object, using a two-stream generator (context encoder + semantic-map
encoder), a background-based class predictor, and spatial-channel
adaptive instance normalization, trained adversarially.
"""

__version__ = "0.1.0"
