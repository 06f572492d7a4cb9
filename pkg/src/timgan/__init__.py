"""Text-instructed image editing at desk scale.

Instructions ("add / remove / modify") become neural operators: a spatial
mask decides where to edit and a text-adaptive routed network decides how,
trained as a conditional GAN on synthetic multi-object scenes.
"""

__version__ = "0.1.0"
