"""Streams the reverse-chain noise blocks for a training run.

The whole run's block shapes are known up front, so a producer process
(fork + double-buffered shared memory) can draw each batch's block from a
dedicated generator substream while the main process is busy with the
previous batch. Drawing inline from the same generator in the same order
yields bitwise-identical blocks, so the process is purely a throughput
optimization and the fallback path matches it exactly.
"""

from __future__ import annotations

import multiprocessing as mp
import sys

import numpy as np

_FORK_OK = sys.platform.startswith("linux") and hasattr(mp, "get_context")


class ChainNoiseSource:
    """Produces a fixed sequence of standard-normal blocks.

    blocks: list of shapes, consumed in order via acquire()/release().
    Slots must be released before the next acquire."""

    def __init__(self, rng: np.random.Generator, blocks: list[tuple[int, ...]],
                 use_process: bool = True):
        self._blocks = [tuple(int(v) for v in b) for b in blocks]
        self._rng = rng
        self._idx = 0
        self._acquired = False
        self._proc = None
        self._shm = None
        sizes = [int(np.prod(b)) for b in self._blocks]
        self._max_bytes = 8 * max(sizes, default=0)
        nontrivial = [s for s in sizes if s > 0]
        if use_process and _FORK_OK and nontrivial:
            self._start_process()

    def _start_process(self):
        from multiprocessing import shared_memory

        ctx = mp.get_context("fork")
        self._shm = shared_memory.SharedMemory(create=True,
                                               size=2 * self._max_bytes)
        self._free = [ctx.Semaphore(1), ctx.Semaphore(1)]
        self._filled = [ctx.Semaphore(0), ctx.Semaphore(0)]
        self._proc = ctx.Process(target=self._produce, daemon=True)
        self._proc.start()
        # the parent's copy of the generator must never advance
        self._rng = None

    def _produce(self):  # runs in the forked child
        buf = self._shm.buf
        slot_id = 0
        for shape in self._blocks:
            count = int(np.prod(shape))
            if count == 0:
                continue
            self._free[slot_id].acquire()
            arr = np.ndarray(count, dtype=np.float64, buffer=buf,
                             offset=slot_id * self._max_bytes)
            self._rng.standard_normal(out=arr)
            self._filled[slot_id].release()
            slot_id ^= 1

    def acquire(self) -> np.ndarray:
        """The next block, in schedule order. Valid until release()."""
        if self._acquired:
            raise RuntimeError("previous noise block not released")
        if self._idx >= len(self._blocks):
            raise RuntimeError("noise schedule exhausted")
        shape = self._blocks[self._idx]
        count = int(np.prod(shape))
        self._acquired = True
        if count == 0:
            return np.empty(shape)
        if self._proc is None:
            return self._rng.standard_normal(size=shape)
        slot_id = self._slot_of(self._idx)
        self._filled[slot_id].acquire()
        return np.ndarray(shape, dtype=np.float64, buffer=self._shm.buf,
                          offset=slot_id * self._max_bytes)

    def _slot_of(self, idx: int) -> int:
        # slots alternate over the nonempty blocks only
        nonempty = sum(1 for b in self._blocks[:idx] if int(np.prod(b)) > 0)
        return nonempty % 2

    def release(self) -> None:
        if not self._acquired:
            raise RuntimeError("no acquired noise block")
        shape = self._blocks[self._idx]
        if self._proc is not None and int(np.prod(shape)) > 0:
            self._free[self._slot_of(self._idx)].release()
        self._idx += 1
        self._acquired = False

    def close(self) -> None:
        if self._proc is not None:
            self._proc.terminate()
            self._proc.join(timeout=5)
            self._proc = None
        if self._shm is not None:
            self._shm.close()
            try:
                self._shm.unlink()
            except FileNotFoundError:
                pass
            self._shm = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):  # pragma: no cover - best-effort cleanup
        try:
            self.close()
        except Exception:
            pass
