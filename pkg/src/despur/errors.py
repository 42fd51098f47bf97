"""Error types shared by all modules.

Every error carries a stable machine code plus the HTTP status the API layer
maps it to (4xx caller fault, 5xx internal fault).
"""

from __future__ import annotations


class DespurError(Exception):
    code = "INTERNAL"
    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


def _error(name: str, code: str, http_status: int) -> type[DespurError]:
    return type(name, (DespurError,), {"code": code, "http_status": http_status})


# dataset ingestion / browsing
MissingSplit = _error("MissingSplit", "MISSING_SPLIT", 400)
UnknownClassDirectory = _error("UnknownClassDirectory", "UNKNOWN_CLASS_DIRECTORY", 400)
UndecodableImage = _error("UndecodableImage", "UNDECODABLE_IMAGE", 400)
DimensionMismatch = _error("DimensionMismatch", "DIMENSION_MISMATCH", 400)
UnknownImageId = _error("UnknownImageId", "UNKNOWN_IMAGE", 404)
PredictionsUnavailable = _error("PredictionsUnavailable", "PREDICTIONS_UNAVAILABLE", 409)
ModelUnavailable = _error("ModelUnavailable", "MODEL_UNAVAILABLE", 409)

# annotation store
NonBinaryMask = _error("NonBinaryMask", "NON_BINARY_MASK", 400)
CorruptMaskFile = _error("CorruptMaskFile", "CORRUPT_MASK_FILE", 500)
TestSplitReadOnly = _error("TestSplitReadOnly", "TEST_SPLIT_READONLY", 409)
InvalidRange = _error("InvalidRange", "INVALID_RANGE", 400)
UnknownBackend = _error("UnknownBackend", "UNKNOWN_BACKEND", 400)
BackendFailure = _error("BackendFailure", "BACKEND_FAILURE", 502)

# model runtime
UnreadableCheckpoint = _error("UnreadableCheckpoint", "UNREADABLE_CHECKPOINT", 400)
BackendMismatch = _error("BackendMismatch", "BACKEND_MISMATCH", 400)
ShapeMismatch = _error("ShapeMismatch", "SHAPE_MISMATCH", 400)
InvalidLabel = _error("InvalidLabel", "INVALID_LABEL", 400)
CapabilityMissing = _error("CapabilityMissing", "CAPABILITY_MISSING", 409)
NonFiniteGradient = _error("NonFiniteGradient", "NON_FINITE_GRADIENT", 500)
UnknownCheckpoint = _error("UnknownCheckpoint", "UNKNOWN_CHECKPOINT", 404)

# influence engine
CorruptCacheFile = _error("CorruptCacheFile", "CORRUPT_CACHE_FILE", 500)
NotTestImage = _error("NotTestImage", "NOT_TEST_IMAGE", 400)

# paired trainer
NoTrainingData = _error("NoTrainingData", "NO_TRAINING_DATA", 409)
NonFiniteLoss = _error("NonFiniteLoss", "NON_FINITE_LOSS", 500)

# task center
InvalidPayload = _error("InvalidPayload", "INVALID_PAYLOAD", 400)
QueueFull = _error("QueueFull", "QUEUE_FULL", 429)
UnknownJobId = _error("UnknownJobId", "UNKNOWN_JOB", 404)

# cli / config
ConfigInvalid = _error("ConfigInvalid", "CONFIG_INVALID", 400)
InvalidArgument = _error("InvalidArgument", "INVALID_ARGUMENT", 400)


class JobCancelled(Exception):
    """Control-flow signal raised by executors when they observe a cancel request.

    Not a DespurError: cancellation is a terminal status, not a fault. May carry
    the reference of a partial result (e.g. the last completed-epoch checkpoint).
    """

    def __init__(self, result_ref: str | None = None):
        super().__init__("cancelled")
        self.result_ref = result_ref
