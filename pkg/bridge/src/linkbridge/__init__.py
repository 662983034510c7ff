"""linkbridge: thin client gluing the medlink toolkit to real LLMs.

Two halves:

* :mod:`linkbridge.api` — batched prompt submission with retries and a
  failure report, writing response files in the toolkit's ingestion
  formats.
* :mod:`linkbridge.masked` — a mask-service client plus a toy local
  model demonstrating per-step allowed-token filtering during
  generation.

The bridge talks to the toolkit only through its external interfaces
(NDJSON files, the `medlink` CLI, and the line-delimited JSON wire
protocol); it never imports toolkit internals.
"""

from .api import (ApiJob, BridgeError, CredentialError, HttpTransport,
                  MockTransport, PermanentError, TransientError, run_batch)
from .masked import (MaskServiceClient, ServiceError, ToyModel,
                     masked_generate_demo)

__all__ = [
    "ApiJob", "BridgeError", "CredentialError", "HttpTransport",
    "MockTransport", "PermanentError", "TransientError", "run_batch",
    "MaskServiceClient", "ServiceError", "ToyModel", "masked_generate_demo",
]
