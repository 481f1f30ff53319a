import threading
import time
from concurrent.futures import ProcessPoolExecutor, as_completed

import psutil
from tqdm import tqdm

from tensorcf.config import config
from tensorcf.core.grid import CellStatus
from tensorcf.utils import Log, synchronized

logger = Log(__name__)

"""
PENDING ─> RUNNING ─> COMPLETED √
              └─> FAILED
"""

# read-only state installed once per worker process
_SHARED = None


def _install_shared(shared):
    global _SHARED
    _SHARED = shared


def _run_job(func, job):
    try:
        return True, func(_SHARED, job)
    except Exception as e:
        return False, f"{type(e).__name__}: {e}"


def default_workers():
    physical = psutil.cpu_count(logical=False) or 1
    return max(1, min(config.DEFAULT_MAX_WORKERS, physical))


class WorkerPool:
    """Runs `func(shared, job)` for every job; failures are returned, never raised.

    Results come back in job order whatever the completion order was.
    """

    def __init__(self, max_workers=None, on_job_changed=None, progress=True):
        self._lock = threading.Lock()
        physical = psutil.cpu_count(logical=False) or 1
        requested = default_workers() if max_workers is None else int(max_workers)
        if requested < 1:
            raise ValueError(f"max_workers must be at least 1, got {max_workers}")
        self.max_workers = min(requested, physical)
        if self.max_workers < requested:
            logger.warning(f"WorkerPool: {requested} workers requested, capped at {physical} physical cores")
        self.on_job_changed = on_job_changed
        self.progress = progress
        self.status = {}

    @synchronized
    def change_status(self, index, status):
        logger.debug(f"[Job {index}] Change status from '{self.status.get(index)}' to '{status}'")
        self.status[index] = status
        if self.on_job_changed:
            try:
                self.on_job_changed(index, status)
            except Exception as e:
                logger.error(f"WorkerPool on_job_changed: failed: {e}")

    def get_status_dict(self):
        return dict(self.status)

    def _finish(self, index, job, outcome):
        success, result = outcome
        if success:
            self.change_status(index, CellStatus.COMPLETED)
        else:
            logger.error(f"[Job {index}] {job} failed (error:{result})")
            self.change_status(index, CellStatus.FAILED)

    def run(self, func, jobs, shared=None, desc="cells"):
        jobs = list(jobs)
        for index in range(len(jobs)):
            self.change_status(index, CellStatus.PENDING)
        outcomes = [None] * len(jobs)
        start = time.time()
        bar = tqdm(total=len(jobs), desc=desc, disable=not self.progress, leave=False)
        if self.max_workers == 1 or len(jobs) <= 1:
            _install_shared(shared)
            for index, job in enumerate(jobs):
                self.change_status(index, CellStatus.RUNNING)
                outcomes[index] = _run_job(func, job)
                self._finish(index, job, outcomes[index])
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=self.max_workers, initializer=_install_shared,
                                     initargs=(shared,)) as executor:
                futures = {}
                for index, job in enumerate(jobs):
                    futures[executor.submit(_run_job, func, job)] = index
                    self.change_status(index, CellStatus.RUNNING)
                for future in as_completed(futures):
                    index = futures[future]
                    try:
                        outcomes[index] = future.result()
                    except Exception as e:
                        outcomes[index] = (False, f"{type(e).__name__}: {e}")
                    self._finish(index, jobs[index], outcomes[index])
                    bar.update(1)
        bar.close()
        failed = sum(1 for success, _ in outcomes if not success)
        logger.info(f"WorkerPool: {len(jobs)} jobs on {self.max_workers} workers in "
                    f"{time.time() - start:.1f}s, {failed} failed")
        return outcomes
