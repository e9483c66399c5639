"""Robust physics-informed regression on corrupted observations."""

__version__ = "0.1.0"


def _tune_allocator() -> None:
    # training churns through many ~1 MB coefficient arrays per step; with
    # glibc defaults each one is mmap'd and unmapped again, so every step
    # pays page-fault costs.  Keeping large chunks on the heap trades a
    # little resident memory for a multiple of throughput.
    import ctypes

    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()
