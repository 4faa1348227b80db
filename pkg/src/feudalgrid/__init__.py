"""feudalgrid: manager/worker agents for text-manual grid games.

A self-contained workbench: templated grid-world games whose rules are
described in generated text manuals, a multi-hop plan-generating
manager, a convolutional worker policy, scripted oracle agents, and the
from-scratch reverse-mode differentiation core they all train on.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, primitive_forward
from .optim import ParameterStore

__all__ = ["Tape", "Tensor", "backward", "primitive_forward", "ParameterStore", "__version__"]
