"""In-memory job store: one background thread per submitted run."""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

from fedtrees.errors import ConfigError, DataError
from fedtrees.experiments import RunArtifacts


@dataclass
class Job:
    job_id: str
    operation: str
    state: str = "queued"
    error_kind: str | None = None
    error_message: str | None = None
    artifacts: RunArtifacts | None = None
    done: threading.Event = field(default_factory=threading.Event)


class JobStore:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._order: list[str] = []
        self._lock = threading.Lock()

    def submit(self, operation: str, work) -> Job:
        """Register a job and run ``work`` on a daemon thread."""
        job = Job(job_id=uuid.uuid4().hex[:12], operation=operation)
        with self._lock:
            self._jobs[job.job_id] = job
            self._order.append(job.job_id)
        threading.Thread(target=self._run, args=(job, work), daemon=True).start()
        return job

    def _run(self, job: Job, work) -> None:
        job.state = "running"
        try:
            job.artifacts = work()
            job.state = "done"
        except ConfigError as exc:
            job.error_kind, job.error_message = "config", str(exc)
            job.state = "error"
        except DataError as exc:
            job.error_kind, job.error_message = "data", str(exc)
            job.state = "error"
        except Exception as exc:
            job.error_kind = "runtime"
            job.error_message = f"{type(exc).__name__}: {exc}"
            job.state = "error"
        finally:
            job.done.set()

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return [self._jobs[job_id] for job_id in self._order]
