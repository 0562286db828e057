"""Run configuration: canonical JSON in/out, strict key checking, desk presets."""

import json
from dataclasses import asdict, dataclass, field, fields


@dataclass
class Config:
    image_size: int = 352
    n_superpixels: int = 100
    a_k: int = 10
    lambdas: tuple = (1.0, 1.0, 10.0)
    lr_max: float = 8e-5
    lr_min: float = 8e-6
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    encoder_widths: tuple = (64, 128, 256)
    n_heads: int = 1
    slic_compactness: float = 10.0
    slic_iterations: int = 10
    f_beta_squared: float = 0.3
    depth_degrade: float = 0.3

    def validate(self):
        if self.image_size % 32:
            raise ValueError(f"image_size {self.image_size} must be divisible by 32")
        if self.n_superpixels < 2:
            raise ValueError("n_superpixels must be >= 2")
        if self.a_k >= self.n_superpixels:
            raise ValueError(f"a_k={self.a_k} must be < n_superpixels={self.n_superpixels}")
        if self.a_k < 1:
            raise ValueError("a_k must be >= 1")
        if len(self.lambdas) != 3 or len(self.adam_betas) != 2 or len(self.encoder_widths) != 3:
            raise ValueError("lambdas, adam_betas, encoder_widths have fixed lengths 3/2/3")
        if not 0.0 <= self.depth_degrade <= 1.0:
            raise ValueError("depth_degrade must be a probability")
        return self

    def to_json(self):
        d = asdict(self)
        for k in ("lambdas", "adam_betas", "encoder_widths"):
            d[k] = list(d[k])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for k in ("lambdas", "adam_betas", "encoder_widths"):
            if k in data:
                data[k] = tuple(data[k])
        return cls(**data).validate()


PRESETS = {
    "paper": Config(),
    "desk96": Config(image_size=96, n_superpixels=25, a_k=5, epochs=30,
                     batch_size=4, encoder_widths=(32, 64, 128),
                     lr_max=2e-3, lr_min=2e-4),
    "desk64": Config(image_size=64, n_superpixels=25, a_k=5, epochs=30,
                     batch_size=4, encoder_widths=(32, 64, 128),
                     lr_max=2e-3, lr_min=2e-4),
}


def load_config(path=None, preset=None, overrides=None):
    if path is not None:
        with open(path) as fh:
            cfg = Config.from_json(fh.read())
    elif preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = Config(**asdict(PRESETS[preset]))
    else:
        cfg = Config()
    if overrides:
        for k, v in overrides.items():
            if v is None:
                continue
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            setattr(cfg, k, v)
    return cfg.validate()
