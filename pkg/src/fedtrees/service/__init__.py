"""HTTP service wrapping the experiment drivers."""

from fedtrees.service.app import create_app
from fedtrees.service.schemas import (
    ErrorInfo,
    HealthInfo,
    ReportModel,
    ReportRowModel,
    RunList,
    RunRequest,
    RunStatus,
)

__all__ = [
    "ErrorInfo",
    "HealthInfo",
    "ReportModel",
    "ReportRowModel",
    "RunList",
    "RunRequest",
    "RunStatus",
    "create_app",
]
