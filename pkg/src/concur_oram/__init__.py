"""Multi-client tree ORAM with background parallel evictions.

Stateless clients coordinate only through server-hosted logs, counters,
locks and regions. See README.md for an overview.
"""

from .core import OramParams, make_dummy_id, is_real
from .client import Client, open_client, setup_oram

__all__ = ["OramParams", "make_dummy_id", "is_real", "Client", "open_client", "setup_oram"]
__version__ = "0.1.0"
