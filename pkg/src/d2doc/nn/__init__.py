from .tensor import NEG, ShapeError, Tensor
from .params import ParamStore, PlateauHalver, TrainingError, sgd_step
from .gradcheck import grad_check

__all__ = [
    "NEG", "ShapeError", "Tensor", "ParamStore", "PlateauHalver", "TrainingError",
    "sgd_step", "grad_check",
]
