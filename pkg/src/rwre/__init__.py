"""Random walks in perturbed random environments on Z^d."""

import os

# The TBB layer is usually absent; workqueue is always available and the
# kernels are written so results do not depend on the thread schedule.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
