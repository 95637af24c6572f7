import time


class TokenCache:
    """Caches identity provider tokens until shortly before they expire."""

    def __init__(self, fetch, skew=60):
        self.fetch = fetch
        self.skew = skew
        self._tokens = {}

    def get(self, audience):
        token = self._tokens.get(audience)
        if token is None or token.expires_at - self.skew < time.time():
            token = self.fetch(audience)
            self._tokens[audience] = token
        return token.value
