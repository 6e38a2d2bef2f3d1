"""Adam, Xavier initialisation and the seeded random streams."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, TrainingDivergedError

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


def random_streams(seed, count=2):
    """Independent PCG64 generators spawned from ``SeedSequence(seed)``.

    Stream 0 initialises weights, stream 1 shuffles mini-batches.
    """
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def fans(shape):
    """(fan_in, fan_out) of a dense ``(out, in)`` or conv ``(out, in, kh, kw)`` weight."""
    if len(shape) == 2:
        return shape[1], shape[0]
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    raise InvalidArgumentError(f"unsupported weight shape {shape}")


def xavier_uniform(shape, rng):
    """Uniform on ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if any(d < 1 for d in shape):
        raise InvalidArgumentError(f"dimensions must be positive, got {shape}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    fan_in, fan_out = fans(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    """First and second moment buffers for a list of parameter arrays."""

    m: list
    v: list
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr):
    """Update ``params`` in place with bias-corrected Adam.

    Raises
    ------
    TrainingDivergedError
        If any gradient entry is not finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("params, grads and optimiser state differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} differs from parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
