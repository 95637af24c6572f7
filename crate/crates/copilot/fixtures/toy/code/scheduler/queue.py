import collections


class Queue:
    """FIFO job queue shared by the scheduler and the API."""

    def __init__(self):
        self._items = collections.deque()

    def push(self, job):
        self._items.append(job)

    def pop(self):
        return self._items.popleft() if self._items else None

    def depth(self):
        return len(self._items)
