class WalReader:
    """Reads write-ahead log records from the primary database."""

    def __init__(self, log):
        self.log = log
        self._pos = 0

    def read(self, n):
        records = self.log[self._pos:self._pos + n]
        self._pos += len(records)
        return records

    def position(self):
        return self._pos
