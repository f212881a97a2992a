"""Dialogue response generation with composable latent response mechanisms.

A response style is modelled as a "molecule": an ordered sequence of learned
"atom" vectors that transform the encoder's context vector before decoding.
A teacher network (seeing post and response) proposes molecules and is trained
by policy gradient; a student network (seeing only the post) learns to
reproduce them and to decode responses, and is the deployed model.
"""

__version__ = "0.1.0"

from .autodiff import Value, backward, no_grad
from .params import ParameterStore, adadelta_step

__all__ = ["Value", "backward", "no_grad", "ParameterStore", "adadelta_step"]
