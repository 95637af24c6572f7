from replication.wal_reader import WalReader


class Replicator:
    """Ships write-ahead log batches from the primary to each replica."""

    def __init__(self, reader: WalReader, replicas, batch_size=64):
        self.reader = reader
        self.replicas = replicas
        self.batch_size = batch_size

    def replicate_once(self):
        batch = self.reader.read(self.batch_size)
        for replica in self.replicas:
            replica.apply(batch)
        return len(batch)

    def lag(self, replica):
        return self.reader.position() - replica.applied_position()
