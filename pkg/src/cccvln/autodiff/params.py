"""Named parameter collections, plain SGD, and the binary checkpoint container."""
from __future__ import annotations

import json
import math
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tape, Tensor

FORMAT_MAGIC = "CCC-CHECKPOINT"
FORMAT_VERSION = 1


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint container."""


class ParamStore:
    """Name -> float64 array map, iterated in lexicographic name order.

    Every name carries the store prefix (``"follower/enc.w"``) so that several
    stores can be bound to one tape without collisions.
    """

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> str:
        full = f"{self.prefix}/{name}"
        if full in self._arrays:
            raise KeyError(f"duplicate parameter {full!r}")
        self._arrays[full] = np.array(value, dtype=np.float64)
        self._arrays = dict(sorted(self._arrays.items()))
        return full

    def init_uniform(self, name: str, shape: tuple, fan_in: int, rng: np.random.Generator) -> str:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def init_zeros(self, name: str, shape: tuple) -> str:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._arrays.items())

    def size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self) -> "ParamStore":
        other = ParamStore(self.prefix)
        other._arrays = {k: v.copy() for k, v in self._arrays.items()}
        return other

    def assign(self, other: "ParamStore") -> None:
        """Overwrite values in place from a store with identical layout."""
        if other.names() != self.names():
            raise KeyError("parameter layouts differ")
        for k, v in other._arrays.items():
            self._arrays[k][...] = v

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        """Tensors for every parameter: tape leaves, or constants when ``tape`` is None."""
        if tape is None:
            return {k: Tensor(v) for k, v in self._arrays.items()}
        return tape.bind(self)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self._arrays.values()]) if self._arrays else np.zeros(0)

    def flat_grad(self, grads: Mapping[str, np.ndarray]) -> np.ndarray:
        """Gradient map flattened in store order; absent names count as zero."""
        parts = []
        for k, v in self._arrays.items():
            g = grads.get(k)
            parts.append(np.zeros(v.size) if g is None else np.asarray(g).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat(self, vec: np.ndarray) -> None:
        off = 0
        for v in self._arrays.values():
            n = v.size
            v[...] = vec[off:off + n].reshape(v.shape)
            off += n


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def sgd_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
             clip_norm: float | None = None) -> None:
    """theta <- theta - lr * grad, in place, optionally after global-norm clipping."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for name in sorted(grads):
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(name)
    scale = 1.0
    if clip_norm is not None:
        norm = global_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
    if lr == 0.0:
        return
    for name in sorted(grads):
        g = grads[name]
        if scale != 1.0:
            g = g * scale
        store[name][...] -= lr * g


def split_grads(grads: Mapping[str, np.ndarray], store: ParamStore) -> dict[str, np.ndarray]:
    prefix = store.prefix + "/"
    return {k: v for k, v in grads.items() if k.startswith(prefix)}


# -- checkpoint container ---------------------------------------------------
#
# text header:
#   CCC-CHECKPOINT 1
#   seed <int>
#   meta <compact json>
#   tensors <n>
#   <name>\t<d0,d1,...>        (one per tensor, lexicographic; "" for scalars)
#   end
# then the concatenated little-endian float64 payloads in manifest order.

def encode_container(tensors: Mapping[str, np.ndarray], seed: int, meta: dict | None = None) -> bytes:
    names = sorted(tensors)
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION}", f"seed {int(seed)}",
             "meta " + json.dumps(meta or {}, sort_keys=True, separators=(",", ":")),
             f"tensors {len(names)}"]
    for name in names:
        if "\t" in name or "\n" in name:
            raise CheckpointError(f"illegal tensor name {name!r}")
        lines.append(f"{name}\t{','.join(str(d) for d in np.shape(tensors[name]))}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes() for n in names)
    return header + payload


def decode_container(blob: bytes) -> tuple[dict[str, np.ndarray], int, dict]:
    pos = 0

    def next_line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated header")
        line = blob[pos:end]
        pos = end + 1
        try:
            return line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("header is not valid UTF-8") from exc

    first = next_line().split(" ")
    if len(first) != 2 or first[0] != FORMAT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint container")
    if first[1] != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported container version {first[1]!r}")
    try:
        key, seed_s = next_line().split(" ", 1)
        if key != "seed":
            raise CheckpointError("missing seed record")
        seed = int(seed_s)
        key, meta_s = next_line().split(" ", 1)
        if key != "meta":
            raise CheckpointError("missing meta record")
        meta = json.loads(meta_s)
        key, n_s = next_line().split(" ", 1)
        if key != "tensors":
            raise CheckpointError("missing tensor count")
        n = int(n_s)
    except (ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed header: {exc}") from exc
    manifest = []
    for _ in range(n):
        parts = next_line().split("\t")
        if len(parts) != 2:
            raise CheckpointError("malformed manifest line")
        name, dims = parts
        try:
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except ValueError as exc:
            raise CheckpointError(f"bad shape for {name!r}") from exc
        manifest.append((name, shape))
    if next_line() != "end":
        raise CheckpointError("manifest not terminated")
    if [m[0] for m in manifest] != sorted(m[0] for m in manifest):
        raise CheckpointError("manifest not in lexicographic order")
    tensors = {}
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(blob):
            raise CheckpointError(f"payload truncated at {name!r}")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes after payload")
    return tensors, seed, meta
