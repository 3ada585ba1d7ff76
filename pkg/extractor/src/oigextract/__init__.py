"""Image-side preprocessing for the gaussian instance-lifting pipeline.

Produces, per input view: a non-overlapping instance mask raster, a
"local" embedding per mask (the cropped, background-zeroed mask region
run through an image encoder), a "context" embedding per mask (masked
average pooling over the encoder's pre-projection spatial features,
then the encoder's final projection), and unit-normalized text-label
embeddings. Everything is written in the lifting pipeline's file
formats; the two packages share no code, only bytes.
"""

__version__ = "0.1.0"
