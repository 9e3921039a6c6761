"""Global-model evaluation, rounds-to-target tables, and CSV emission.

The CSV schema is fixed and bit-exact: identical runs produce identical
bytes except for the wall-time column, which is excluded from determinism
guarantees.
"""

from dataclasses import dataclass

from .data import Dataset
from .models import ModelSpec, accuracy, loss

CSV_HEADER = ("round,train_loss,test_loss,test_accuracy,wall_time_s,"
              "uplink_scalars,downlink_scalars,fallback")

#: Marker for an accuracy target never reached within the run.
UNREACHED = "..."


@dataclass(frozen=True)
class RoundRecord:
    round: int
    train_loss: float
    test_loss: float
    test_accuracy: float
    wall_time_s: float
    uplink_scalars: int
    downlink_scalars: int
    fallback: bool = False

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"test_accuracy {self.test_accuracy} outside [0, 1]")
        if self.uplink_scalars < 0 or self.downlink_scalars < 0:
            raise ValueError("scalar counts must be >= 0")


def evaluate_global(spec: ModelSpec, w, train_set: Dataset,
                    test_set: Dataset) -> tuple[float, float, float]:
    """(train loss, test loss, test accuracy) of the global model."""
    train_batch = train_set.to_batch()
    test_batch = test_set.to_batch()
    return (loss(spec, w, train_batch),
            loss(spec, w, test_batch),
            accuracy(spec, w, test_batch))


def rounds_to_target(records: list, targets: list) -> list:
    """First round index at which test accuracy reaches each target.

    Returns one entry per target: the round number, or None when the run
    never gets there (rendered as "..." in tables).
    """
    rounds = [r.round for r in records]
    if any(b <= a for a, b in zip(rounds, rounds[1:])):
        raise ValueError("records must be sorted by strictly increasing round")
    out = []
    for target in targets:
        hit = None
        for rec in records:
            if rec.test_accuracy >= target:
                hit = rec.round
                break
        out.append(hit)
    return out


def format_rounds(value) -> str:
    return UNREACHED if value is None else str(value)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_csv(records: list, path) -> None:
    """Write records in the fixed schema; floats carry 9 significant digits."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.round),
            _fmt(r.train_loss),
            _fmt(r.test_loss),
            _fmt(r.test_accuracy),
            _fmt(r.wall_time_s),
            str(r.uplink_scalars),
            str(r.downlink_scalars),
            "true" if r.fallback else "false",
        ]))
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list:
    """Read a file produced by :func:`write_csv`."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected CSV header")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 8 or parts[7] not in ("true", "false"):
            raise ValueError(f"{path}: malformed row {line!r}")
        try:
            records.append(RoundRecord(
                round=int(parts[0]),
                train_loss=float(parts[1]),
                test_loss=float(parts[2]),
                test_accuracy=float(parts[3]),
                wall_time_s=float(parts[4]),
                uplink_scalars=int(parts[5]),
                downlink_scalars=int(parts[6]),
                fallback=parts[7] == "true",
            ))
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row {line!r} ({exc})") from exc
    return records
