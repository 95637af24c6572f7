import time


class HealthCheck:
    """Probes backend nodes and caches their readiness."""

    def __init__(self, probe, ttl=5.0):
        self.probe = probe
        self.ttl = ttl
        self._cache = {}

    def is_ready(self, node):
        ready, at = self._cache.get(node, (False, 0.0))
        if time.monotonic() - at > self.ttl:
            ready = self.probe(node)
            self._cache[node] = (ready, time.monotonic())
        return ready
