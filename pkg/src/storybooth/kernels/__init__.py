"""Hot inner loops, compiled when available.

The compiled extension ``_ckernels`` is preferred; if it is missing (e.g. a
source checkout without a build step) the numpy implementations in
``_pykernels`` are used. Set ``STORYBOOTH_KERNELS=python`` to force the
fallback, or ``compiled`` to fail loudly when the extension is absent.

Functions
---------
masked_softmax(scores, allowed=None)
    Row softmax over allowed entries; disallowed entries are exactly 0.
region_mask(membership, draws=None, threshold=1.0)
    Binary attention mask from per-token subject bitsets plus optional
    uniform draws compared against ``threshold``; diagonal always 1.
gated_argmax(weights, frames, tokens)
    Per-row argmax restricted to other frames; -1 where no positive entry.
"""

from __future__ import annotations

import os

from . import _pykernels as python_backend

_choice = os.environ.get("STORYBOOTH_KERNELS", "auto").lower()

compiled_backend = None
if _choice != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        if _choice == "compiled":
            raise

if compiled_backend is not None:
    _active = compiled_backend
    BACKEND = "compiled"
else:
    _active = python_backend
    BACKEND = "python"

masked_softmax = _active.masked_softmax
region_mask = _active.region_mask
gated_argmax = _active.gated_argmax

__all__ = ["BACKEND", "masked_softmax", "region_mask", "gated_argmax",
           "python_backend", "compiled_backend"]
