"""LPGNet assembled from its blocks, plus the ablation switches."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import DialogueBatch
from .errors import ContractError
from .fusion import DualGatedFusion, FusedFeatures, multimodal_fuse, unimodal_fuse
from .heads import DEFAULT_LAMBDAS, LossBundle, classify, distill_losses, student_forward, task_loss, total_loss
from .lpia import PATHS, Lpia, LpiaOutput
from .nn import Linear, Module
from .rng import Streams
from .tensor import Tensor, softmax_lastdim


@dataclass(frozen=True)
class Ablation:
    no_inter_attention: bool = False
    no_intra_attention: bool = False
    no_ffn: bool = False
    no_dual_gate: bool = False
    text_only: bool = False
    audio_only: bool = False

    def __post_init__(self):
        if self.text_only and self.audio_only:
            raise ContractError("text_only and audio_only are mutually exclusive")
        if self.no_inter_attention and self.no_intra_attention:
            raise ContractError("removing both intra and inter attention leaves no path")
        if (self.text_only or self.audio_only) and self.no_intra_attention:
            raise ContractError("a unimodal run has only its intra path; it cannot also drop intra attention")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_names(cls, names) -> "Ablation":
        names = [n for n in (names or []) if n and n != "none"]
        unknown = set(names) - set(cls.names())
        if unknown:
            raise ContractError(f"unknown ablation(s) {sorted(unknown)}; choose from {cls.names()}")
        return cls(**{n: True for n in names})

    def active(self) -> list[str]:
        return [name for name, on in asdict(self).items() if on]

    @property
    def label(self) -> str:
        return "+".join(self.active()) or "full"

    @property
    def modalities(self) -> tuple[str, ...]:
        if self.text_only:
            return ("t",)
        if self.audio_only:
            return ("a",)
        return ("t", "a")

    @property
    def paths(self) -> tuple[str, ...]:
        if self.text_only:
            return ("tt",)
        if self.audio_only:
            return ("aa",)
        if self.no_inter_attention:
            return ("tt", "aa")
        if self.no_intra_attention:
            return ("at", "ta")
        return PATHS


@dataclass
class ModelOutput:
    logits: Tensor
    probs: Tensor
    lpia: LpiaOutput | None = None
    fused: FusedFeatures | None = None

    def predictions(self) -> np.ndarray:
        return self.logits.data.argmax(axis=-1)


class LpgNet(Module):
    """LPIA block, dual-gated fusion, classifier and optional student heads.

    Student heads exist only when ``students`` is true; they see ``t_fused``
    and ``a_fused`` and are never consulted by :meth:`forward`.
    """

    arch = "lpgnet"

    def __init__(self, f_t: int, f_a: int, num_classes: int, d: int = 768, d_ff: int | None = None,
                 dropout: float = 0.1, rng: np.random.Generator | None = None, ablation: Ablation | None = None,
                 students: bool = True, tau: float = 1.0, lambdas=DEFAULT_LAMBDAS,
                 kl_direction: str = "student_teacher", leaky_slope: float = 0.01):
        if num_classes < 2:
            raise ContractError("need at least two classes")
        d_ff = 2 * d if d_ff is None else d_ff
        rng = np.random.default_rng(0) if rng is None else rng
        self.hparams = dict(f_t=f_t, f_a=f_a, num_classes=num_classes, d=d, d_ff=d_ff, dropout=dropout,
                            students=students, leaky_slope=leaky_slope)
        self.ablation = ablation or Ablation()
        self.tau = float(tau)
        self.lambdas = tuple(float(x) for x in lambdas)
        self.kl_direction = kl_direction
        self.lpia = Lpia(f_t, f_a, d, d_ff, rng, dropout, leaky_slope)
        self.fusion = DualGatedFusion(d, rng)
        self.classifier = Linear(d, num_classes, rng)
        if students:
            self.student_t = Linear(d, num_classes, rng)
            self.student_a = Linear(d, num_classes, rng)

    @property
    def has_students(self) -> bool:
        return self.hparams["students"]

    def forward(self, batch: DialogueBatch, noise: Streams | None = None) -> ModelOutput:
        ab = self.ablation
        mods = ab.modalities
        x_t = Tensor(batch.text_feats) if "t" in mods else None
        x_a = Tensor(batch.audio_feats) if "a" in mods else None
        lp = self.lpia(x_t, x_a, batch.mask, noise, paths=ab.paths, use_ffn=not ab.no_ffn)
        t_fused, a_fused = unimodal_fuse(lp, self.fusion, use_gates=not ab.no_dual_gate, modalities=mods)
        alpha_t = alpha_a = None
        if ab.text_only:
            f_final = t_fused
        elif ab.audio_only:
            f_final = a_fused
        elif ab.no_dual_gate:
            f_final = 0.5 * t_fused + 0.5 * a_fused
        else:
            alpha_t, alpha_a, f_final = multimodal_fuse(t_fused, a_fused, self.fusion.score)
        logits, probs = classify(f_final, self.classifier)
        return ModelOutput(logits, probs, lp, FusedFeatures(t_fused, a_fused, alpha_t, alpha_a, f_final))

    __call__ = forward

    def loss(self, batch: DialogueBatch, noise: Streams | None = None,
             teacher_soft: Tensor | None = None) -> tuple[LossBundle, ModelOutput]:
        """Total objective on ``batch``.

        ``teacher_soft`` overrides the teacher's softened distribution; the
        gradient checker uses it to hold the distillation target fixed.
        """
        out = self.forward(batch, noise)
        task = task_loss(out.probs, batch.labels, batch.mask)
        zero = Tensor(0.0)
        ce = {"t": zero, "a": zero}
        kl = {"t": zero, "a": zero}
        if self.has_students:
            if teacher_soft is None:
                teacher_soft = softmax_lastdim(out.logits / self.tau).detach()
            for m, h in (("t", out.fused.t_fused), ("a", out.fused.a_fused)):
                if h is None:
                    continue
                head = self.student_t if m == "t" else self.student_a
                _, probs_m, soft_m = student_forward(h, head, self.tau)
                ce[m], kl[m] = distill_losses(soft_m, teacher_soft, probs_m, batch.labels, batch.mask,
                                              self.kl_direction)
        bundle = total_loss(task, ce["t"], ce["a"], kl["t"], kl["a"], self.lambdas)
        return bundle, out

    def inference_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("student_")]
