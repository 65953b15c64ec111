"""Dissipative Lagrangian neural networks.

Learn a single scalar dissipative Lagrangian from trajectory data of
dissipative systems (damped mechanics, Fickian diffusion), recover the
governing matrices from its input-Hessian, and evolve the learned dynamics
forward and backward in time.
"""

import jax

# Second and third derivatives amplify rounding error; everything runs in
# float64. Must happen before any jax.numpy array is created.
jax.config.update("jax_enable_x64", True)

from .network import (  # noqa: E402
    DerivativeBundle,
    NetworkParams,
    NonFiniteLossError,
    derivative_bundle,
    forward,
    init_network,
    input_gradient,
    input_hessian,
    input_hvp,
    loss_param_gradient,
    network_output,
    quadratic_net,
)

__all__ = [
    "DerivativeBundle",
    "NetworkParams",
    "NonFiniteLossError",
    "derivative_bundle",
    "forward",
    "init_network",
    "input_gradient",
    "input_hessian",
    "input_hvp",
    "loss_param_gradient",
    "network_output",
    "quadratic_net",
]

__version__ = "0.1.0"
