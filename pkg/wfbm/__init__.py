# pylint: skip-file
import os
import capnp

__version__ = "0.1.0"

WFBM_PATH = os.path.dirname(os.path.abspath(__file__))

schema = capnp.load(os.path.join(WFBM_PATH, "wfbm.capnp"))
