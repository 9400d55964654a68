"""Random-matrix datasets, token codecs and a small transformer for learning
linear algebra from examples, with OOD evaluation grids."""
from . import codec, datagen, ensembles, evalkit, linalg, nanoformer, oodlab
from .errors import (DatasetFormatError, DecodeError, DegenerateReferenceError, EigenlabError,
                     EncodeRangeError, GenerationError, PreconditionError, SingularMatrixError,
                     SolverError, TrainingDivergenceError)

__version__ = "0.1.0"
