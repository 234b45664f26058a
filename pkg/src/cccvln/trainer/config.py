"""Run configuration: a flat ``key = value`` file plus command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

PRESETS = ("seq2seq", "speaker-follower", "rcm")
ABLATION_ROWS = ("dA", "dX", "dA+dX", "dA+dX+dAu", "cf-noref", "cf", "full")

# loss-term switches per ablation row, on top of the task losses every mode keeps
_ROW_TERMS = {
    "dA": {"dA"},
    "dX": {"dX"},
    "dA+dX": {"dA", "dX"},
    "dA+dX+dAu": {"dA", "dX", "dAu"},
    "cf-noref": {"creator", "disc", "cf_task", "zero_reference"},
    "cf": {"creator", "disc", "cf_task"},
    "full": {"dA", "dX", "dAu", "cfA", "cfX", "creator", "disc", "cf_task"},
}
SWITCHES = ("dA", "dX", "dAu", "cfA", "cfX", "creator", "disc", "cf_task", "zero_reference")


class ConfigError(ValueError):
    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{msg}")


@dataclass
class TrainConfig:
    seed: int = 0
    data_seed: int | None = None  # defaults to seed
    mode: str = "ccc"  # baseline | bt | ccc | ablation:<row>
    preset: str = "speaker-follower"
    # optimisation
    lr: float = 0.2
    clip_norm: float = 5.0
    batch_size: int = 8
    u_batch_size: int = 8
    iterations: int = 1000
    batch_mean: bool = False  # conventional mean-gradient step instead of per-sample updates
    samples: int = 1  # intermediate samples per cycle estimate
    # models
    hidden: int = 32
    embed: int = 16
    t_max: int = 12
    t_max_lowlevel: int = 24
    l_max: int = 48
    attention: bool = True
    # world and data
    n_worlds: int = 8
    width: int = 5
    height: int = 5
    wall_density: float = 0.1
    n_labeled: int = 80
    m_unlabeled: int = 400
    n_unseen_worlds: int = 2
    n_val_seen: int = 50
    n_val_unseen: int = 200
    min_len: int = 2
    max_len: int = 5
    # losses
    gamma: float = 0.95
    success_radius: int = 1
    baseline_momentum: float = 0.95
    anneal_beta0: float = 1.0
    anneal_decay: float = 0.995
    anneal_floor: float = 0.2
    w_cycle: float = 0.1
    w_cf_task: float = 0.3
    w_creator: float = 1.0
    cycle_warmup: bool = False  # scale cycle and counterfactual terms by (1 - beta)
    lr_creator: float | None = None  # defaults to lr
    lr_disc: float | None = None
    # bookkeeping
    eval_every: int = 0  # 0: evaluate only at the end
    eval_split: str = "val_unseen"
    trace: bool = False

    def __post_init__(self):
        self.validate()

    # -- derived ---------------------------------------------------------------

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def follower_kind(self) -> str:
        return "lowlevel" if self.preset == "seq2seq" else "panoramic"

    @property
    def use_rl(self) -> bool:
        return self.preset == "rcm"

    def terms(self) -> frozenset[str]:
        """Active switches beyond the task losses (IL, RL, speaker MLE), which are always on."""
        if self.mode in ("baseline", "bt"):
            return frozenset()
        if self.mode == "ccc":
            return frozenset(_ROW_TERMS["full"])
        return frozenset(_ROW_TERMS[self.mode.split(":", 1)[1]])

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {', '.join(PRESETS)}", "preset")
        if self.mode not in ("baseline", "bt", "ccc"):
            if not self.mode.startswith("ablation:") or self.mode.split(":", 1)[1] not in ABLATION_ROWS:
                raise ConfigError(f"unknown mode {self.mode!r}; expected baseline, bt, ccc or "
                                  f"ablation:<{'|'.join(ABLATION_ROWS)}>", "mode")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative", "lr")
        for key in ("batch_size", "iterations", "hidden", "embed", "t_max", "l_max", "n_labeled", "samples"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive", key)
        if self.u_batch_size < 0 or self.m_unlabeled < 0:
            raise ConfigError("unlabeled sizes must be non-negative", "m_unlabeled")
        if self.eval_split not in ("val_seen", "val_unseen"):
            raise ConfigError("eval_split must be val_seen or val_unseen", "eval_split")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def coerce(key: str, raw: str, line: int | None = None):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigError(f"unknown config key {key!r}", key, line)
    typ = str(f.type)
    text = raw.strip()
    try:
        if text.lower() == "none" and "None" in typ:
            return None
        if typ.startswith("bool"):
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key} ({typ})", key, line) from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        body = ln.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", None, lineno)
        key, val = (s.strip() for s in body.split("=", 1))
        out[key] = coerce(key, val, lineno)
    return out


def load_config(text: str | None = None, overrides: dict | None = None) -> TrainConfig:
    values = parse_config_text(text) if text else {}
    values.update(overrides or {})
    return TrainConfig(**values)
