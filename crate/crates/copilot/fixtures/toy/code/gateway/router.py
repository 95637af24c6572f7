from gateway.health import HealthCheck


class Router:
    """Routes relay requests to healthy backend nodes."""

    def __init__(self, nodes, health: HealthCheck):
        self.nodes = nodes
        self.health = health

    def route(self, request):
        healthy = [n for n in self.nodes if self.health.is_ready(n)]
        if not healthy:
            raise RuntimeError("no healthy backend")
        return healthy[hash(request.key) % len(healthy)]
