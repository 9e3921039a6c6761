"""Experiment configuration.

Configs are flat ``key = value`` text (UTF-8, ``#`` starts a comment line),
deliberately dependency-free so every run is bit-auditable. Command-line
flags override file values; unset keys fall back to the defaults below,
which follow the reference experimental setup (40% participation, T=100,
seed=0, beta1=0.9, beta2=0.99).
"""

from dataclasses import dataclass, fields

ALGORITHMS = ("fagh", "fedavg", "scaffold", "fedexp")


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration."""


def _to_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError(f"expected 'true' or 'false', got {s!r}")


def _to_sizes(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(part) for part in s.split(","))


_REQUIRED = object()

# name -> (converter, default); _REQUIRED keys must appear in file or flags
_SCHEMA = {
    "algorithm": (str, _REQUIRED),
    "model": (str, _REQUIRED),
    "hidden_sizes": (_to_sizes, ()),
    "include_bias": (_to_bool, True),
    "dataset": (str, _REQUIRED),
    "n_train": (int, 4000),
    "n_test": (int, 1000),
    "input_dim": (int, 20),
    "num_classes": (int, 10),
    "separation": (float, 3.0),
    "train_images": (str, ""),
    "train_labels": (str, ""),
    "test_images": (str, ""),
    "test_labels": (str, ""),
    "partitioner": (str, "dirichlet"),
    "alpha": (float, 0.2),
    "num_shards": (int, 400),
    "shards_per_client": (int, 2),
    "clients": (int, 20),
    "fraction": (float, 0.4),
    "rounds": (int, 100),
    "seed": (int, 0),
    "eta": (float, 0.1),
    "rho": (float, 0.1),
    "beta1": (float, 0.9),
    "beta2": (float, 0.99),
    "local_lr": (float, 0.1),
    "local_epochs": (int, 1),
    "batch_mode": (str, "full"),
    "batch_size": (int, 512),
    "epsilon": (float, 1e-3),
    "global_lr": (float, 1.0),
    "output": (str, ""),
}


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    model: str
    hidden_sizes: tuple
    include_bias: bool
    dataset: str
    n_train: int
    n_test: int
    input_dim: int
    num_classes: int
    separation: float
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    partitioner: str
    alpha: float
    num_shards: int
    shards_per_client: int
    clients: int
    fraction: float
    rounds: int
    seed: int
    eta: float
    rho: float
    beta1: float
    beta2: float
    local_lr: float
    local_epochs: int
    batch_mode: str
    batch_size: int
    epsilon: float
    global_lr: float
    output: str

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.algorithm not in ALGORITHMS:
            bad(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.model not in ("mlr", "mlp"):
            bad(f"model must be 'mlr' or 'mlp', got {self.model!r}")
        if self.model == "mlp" and not self.hidden_sizes:
            bad("model = mlp requires hidden_sizes")
        if self.model == "mlr" and self.hidden_sizes:
            bad("model = mlr takes no hidden_sizes")
        if any(h < 1 for h in self.hidden_sizes):
            bad("hidden_sizes entries must be >= 1")
        if self.dataset not in ("synthetic", "idx"):
            bad(f"dataset must be 'synthetic' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    bad(f"dataset = idx requires key {key}")
        if self.dataset == "synthetic":
            if self.n_train < 1 or self.n_test < 1:
                bad("n_train and n_test must be >= 1")
            if self.input_dim < 1 or self.num_classes < 2:
                bad("need input_dim >= 1 and num_classes >= 2")
            if self.separation < 0:
                bad("separation must be >= 0")
        if self.partitioner not in ("dirichlet", "shards"):
            bad(f"partitioner must be 'dirichlet' or 'shards', got {self.partitioner!r}")
        if self.clients < 1:
            bad("clients must be >= 1")
        if self.partitioner == "dirichlet" and not self.alpha > 0:
            bad("alpha must be > 0")
        if self.partitioner == "shards":
            if self.num_shards < 1 or self.shards_per_client < 1:
                bad("shard counts must be >= 1")
            if self.num_shards % self.shards_per_client != 0:
                bad("num_shards must be divisible by shards_per_client")
            implied = self.num_shards // self.shards_per_client
            if implied != self.clients:
                bad(f"shard configuration implies {implied} clients, "
                    f"config says {self.clients}")
        if not 0.0 < self.fraction <= 1.0:
            bad(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.rounds < 0:
            bad("rounds must be >= 0")
        if self.seed < 0:
            bad("seed must be >= 0")
        if self.eta < 0:
            bad("eta must be >= 0")
        if not self.rho > 0:
            bad(f"rho must be > 0, got {self.rho}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                bad(f"{name} must lie in [0, 1), got {b}")
        if not self.local_lr > 0:
            bad("local_lr must be > 0")
        if self.local_epochs < 1:
            bad("local_epochs must be >= 1")
        if self.batch_mode not in ("full", "minibatch"):
            bad(f"batch_mode must be 'full' or 'minibatch', got {self.batch_mode!r}")
        if self.batch_size < 1:
            bad("batch_size must be >= 1")
        if self.epsilon < 0:
            bad("epsilon must be >= 0")
        if not self.global_lr > 0:
            bad("global_lr must be > 0")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a raw string map."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus flag overrides.

    Overrides are raw strings keyed by config name; they win over file
    values. Missing keys take schema defaults; algorithm, model, and dataset
    are always required.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        raw = parse_config_text(text, source=str(path))
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value

    values = {}
    for key, (conv, default) in _SCHEMA.items():
        if key in raw:
            try:
                values[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"key {key}: {exc}") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default
    return ExperimentConfig(**values)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Render a config back to the file format (parse/serialize fixed point)."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
