"""Run configuration: flat ``key=value`` files with preset inheritance.

Example::

    preset=desk
    task=copy
    fusion=weight_gate
    half_dim=true
"""

import dataclasses
from dataclasses import dataclass, field, fields

from .errors import ContractError
from .model import ModelConfig

# Published small and base hyperparameter sets, plus a desk-scale preset the tests run.
PRESETS = {
    "small-de-en": dict(n_layers=6, d_model=512, n_heads=4, d_ff=1024, dropout=0.3,
                        warmup=4000, beam=6, alpha=0.2, token_budget=1024),
    "base-en-de": dict(n_layers=6, d_model=512, n_heads=8, d_ff=2048, dropout=0.1,
                       warmup=4000, beam=6, alpha=0.2, token_budget=4096),
    "desk": dict(n_layers=2, d_model=64, n_heads=2, d_ff=128, dropout=0.1,
                 warmup=400, lr_scale=1.0, beam=6, alpha=0.2, token_budget=512),
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    preset: str = ""
    task: str = "copy"
    n_pairs: int = 2000
    min_len: int = 1
    max_len: int = 10
    vocab_size: int = 20
    max_steps: int = 1000
    seed: int = 1
    eval_interval: int = 250
    log_interval: int = 50
    token_budget: int = 512
    checkpoint_dir: str = "runs/default"

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        names = {f.name for f in fields(cls)}
        return cls(model=model, **{k: v for k, v in d.items() if k in names})

    def replace(self, **kw):
        """Copy with flat overrides (model fields and run fields mixed)."""
        return apply_overrides(self, kw)

    def validate(self):
        self.model.validate()
        if self.max_steps < 0:
            raise ContractError("max_steps: must be >= 0")
        if self.token_budget < 2:
            raise ContractError("token_budget: must be >= 2")
        if self.eval_interval < 1:
            raise ContractError("eval_interval: must be >= 1")
        if self.n_pairs < 10:
            raise ContractError("n_pairs: need at least 10 pairs to form train/valid/test splits")
        return self


_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "model"}


def _coerce(name, ftype, raw):
    if not isinstance(raw, str):
        return raw
    t = ftype if isinstance(ftype, type) else {"int": int, "float": float, "bool": bool, "str": str}.get(ftype, str)
    try:
        if t is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return t(raw.strip())
    except ValueError:
        raise ContractError(f"{name}: cannot parse {raw!r} as {t.__name__}") from None


def apply_overrides(cfg, overrides):
    model_kw, run_kw = {}, {}
    for key, raw in overrides.items():
        if key in _MODEL_FIELDS:
            model_kw[key] = _coerce(key, _MODEL_FIELDS[key].type, raw)
        elif key in _RUN_FIELDS:
            run_kw[key] = _coerce(key, _RUN_FIELDS[key].type, raw)
        else:
            raise ContractError(f"{key}: unknown configuration key")
    model = dataclasses.replace(cfg.model, **model_kw) if model_kw else cfg.model
    return dataclasses.replace(cfg, model=model, **run_kw)


def parse_config_text(text):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        pairs[key] = val
    preset = pairs.pop("preset", "")
    base = RunConfig()
    if preset:
        if preset not in PRESETS:
            raise ContractError(f"preset: unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base = apply_overrides(base, PRESETS[preset])
        base = dataclasses.replace(base, preset=preset)
    return apply_overrides(base, pairs).validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def dump_config(cfg):
    lines = [f"{k}={_fmt(v)}" for k, v in cfg.to_dict().items() if k not in ("model", "preset")]
    lines += [f"{k}={_fmt(v)}" for k, v in cfg.model.to_dict().items()]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
