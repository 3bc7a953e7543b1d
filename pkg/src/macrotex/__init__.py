"""Macrocanonical (maximum-entropy) texture models fitted by SOUL."""

from . import config, core, errors, features, gibbs, images, oracle, sampler, soul, synth, weights
from .core import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .features import *  # noqa: F401,F403
from .gibbs import *  # noqa: F401,F403
from .images import *  # noqa: F401,F403
from .oracle import *  # noqa: F401,F403
from .sampler import *  # noqa: F401,F403
from .soul import *  # noqa: F401,F403
from .synth import *  # noqa: F401,F403
from .weights import *  # noqa: F401,F403

__version__ = "0.1.0"
