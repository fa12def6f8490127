from .tensor import Tensor, Tape, backward, no_grad
