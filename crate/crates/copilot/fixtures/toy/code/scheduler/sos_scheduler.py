from scheduler.queue import Queue


class SOSScheduler:
    """Leader-elected scheduler that hands queued jobs to workers."""

    def __init__(self, queue: Queue, workers):
        self.queue = queue
        self.workers = workers

    def run(self):
        while True:
            job = self.queue.pop()
            if job is None:
                break
            worker = min(self.workers, key=lambda w: w.load)
            worker.assign(job)
