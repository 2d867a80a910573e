"""Parameter counting and forward/train-step latency benchmarks."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from .baseline import StackedTransformer
from .data import Dialogue, pad_batch
from .errors import ContractError
from .model import LpgNet
from .optim import Adam
from .rng import Streams, generator
from .tensor import no_grad

BENCH_FIELDS = ("arch", "d", "U", "params", "block_params", "median_forward_ms", "median_train_step_ms")


@dataclass
class ParamCount:
    total: int
    by_name: dict[str, int]

    def group(self, prefix: str) -> int:
        return sum(n for name, n in self.by_name.items() if name == prefix or name.startswith(prefix + "."))

    def by_depth(self, depth: int) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, n in self.by_name.items():
            key = ".".join(name.split(".")[:depth])
            out[key] = out.get(key, 0) + n
        return out


def param_count(model, include_students: bool = True) -> ParamCount:
    by_name = {
        name: int(p.size)
        for name, p in model.named_parameters()
        if include_students or not name.startswith("student_")
    }
    return ParamCount(sum(by_name.values()), by_name)


def interaction_block_params(model) -> int:
    """Parameters of the sequence-interaction block only.

    For LPGNet that is the four enhancement paths; for the baseline it is the
    encoder stacks of both modalities. Projections and heads are excluded.
    """
    counts = param_count(model)
    if isinstance(model, LpgNet):
        return counts.group("lpia.paths")
    if isinstance(model, StackedTransformer):
        return counts.group("enc_t") + counts.group("enc_a")
    raise ContractError(f"no interaction block defined for {type(model).__name__}")


def build_pair(d: int, f: int = 64, num_classes: int = 4, seed: int = 0, d_ff: int | None = None):
    """An inference-configured LPGNet and the matching stacked baseline."""
    lpg = LpgNet(f, f, num_classes, d=d, d_ff=d_ff, rng=generator(seed, "bench", "lpgnet", d), students=False)
    stacked = StackedTransformer(f, f, num_classes, d=d, d_ff=d_ff, rng=generator(seed, "bench", "stacked", d))
    return lpg, stacked


def _random_batch(batch: int, length: int, f: int, num_classes: int, seed: int):
    rng = generator(seed, "bench", "batch", length)
    dialogues = [
        Dialogue(f"b{i}", rng.standard_normal((length, f)), rng.standard_normal((length, f)),
                 rng.integers(0, num_classes, size=length))
        for i in range(batch)
    ]
    return pad_batch(dialogues, batch)[0]


def _median_ms(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def time_model(model, batch, repeats: int, seed: int = 0) -> tuple[float, float]:
    """Median forward and train-step wall time in milliseconds."""

    def forward():
        model.eval()
        with no_grad():
            model.forward(batch)

    opt = Adam(model.named_parameters(), lr=1e-4)
    noise = Streams(seed).child("bench")

    def train_step():
        model.train()
        opt.zero_grad()
        bundle, _ = model.loss(batch, noise=noise)
        bundle.total.backward()
        opt.step()

    fwd = _median_ms(forward, repeats)
    step = _median_ms(train_step, repeats)
    model.eval()
    return fwd, step


def run_bench(seq_lens, dims, repeats: int = 5, batch: int = 4, f: int = 64, num_classes: int = 4,
              seed: int = 0) -> list[dict]:
    """One row per (d, U, arch) with parameter counts and median latencies."""
    if repeats < 3:
        raise ContractError(f"repeats must be >= 3, got {repeats}")
    rows = []
    for d in dims:
        lpg, stacked = build_pair(d, f, num_classes, seed)
        for length in seq_lens:
            data = _random_batch(batch, length, f, num_classes, seed)
            for model in (lpg, stacked):
                fwd, step = time_model(model, data, repeats, seed)
                rows.append({
                    "arch": model.arch,
                    "d": d,
                    "U": length,
                    "params": param_count(model).total,
                    "block_params": interaction_block_params(model),
                    "median_forward_ms": round(fwd, 4),
                    "median_train_step_ms": round(step, 4),
                })
    return rows

