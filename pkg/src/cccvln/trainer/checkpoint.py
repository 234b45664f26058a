"""Checkpoints: every parameter store plus the state needed for a bit-exact resume."""
from __future__ import annotations

from pathlib import Path

from ..autodiff import CheckpointError, decode_container, encode_container
from ..cycle import BaselineTracker
from .config import TrainConfig
from .loop import Trainer, build_models


def checkpoint_bytes(tr: Trainer) -> bytes:
    tensors = {}
    for store in tr.models.stores():
        tensors.update(dict(store.items()))
    meta = {
        "iteration": tr.iteration,
        "baselines": tr.baselines.state(),
        "rng": tr.rng.bit_generator.state,
        "config": tr.cfg.to_dict(),
        "versions": tr._versions,
    }
    return encode_container(tensors, tr.cfg.seed, meta)


def save_checkpoint(tr: Trainer, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(tr))


def restore(blob: bytes, data=None) -> Trainer:
    """Rebuild a trainer from checkpoint bytes; ``data`` defaults to regenerating it from the config."""
    tensors, seed, meta = decode_container(blob)
    try:
        cfg = TrainConfig(**meta["config"])
        models = build_models(cfg)
        for store in models.stores():
            for name in store.names():
                if name not in tensors:
                    raise CheckpointError(f"checkpoint lacks parameter {name!r}")
                if tensors[name].shape != store[name].shape:
                    raise CheckpointError(f"shape mismatch for {name!r}")
                store[name][...] = tensors[name]
        tr = Trainer(cfg, data, models)
        tr.iteration = int(meta["iteration"])
        tr.baselines = BaselineTracker.from_state(meta["baselines"])
        tr.rng.bit_generator.state = meta["rng"]
        tr._versions = dict(meta["versions"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint metadata incomplete: {exc}") from exc
    if seed != cfg.seed:
        raise CheckpointError("header seed does not match the stored config")
    return tr


def load_checkpoint(path, data=None) -> Trainer:
    return restore(Path(path).read_bytes(), data)
