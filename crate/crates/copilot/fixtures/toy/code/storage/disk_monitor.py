import shutil


def disk_usage_ratio(path):
    """Fraction of the volume at path that is in use."""
    usage = shutil.disk_usage(path)
    return usage.used / usage.total


def check_disk(path, threshold=0.9):
    ratio = disk_usage_ratio(path)
    if ratio > threshold:
        return f"disk usage {ratio:.0%} above {threshold:.0%}"
    return None
