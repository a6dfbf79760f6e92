"""Teacher-to-student distillation with feature alignment at three depths.

The teacher stays frozen; both models see identical masked inputs. Student
hidden states at the bottom (post-patchifier), middle (3/4 of the student
depth, mapped proportionally into the teacher), and top (final hidden layer)
taps are passed through trainable linear projectors and pulled toward the
teacher's states with a Smooth-L1 loss. The combined objective adds
beta * alignment to the reconstruction loss.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError
from .losses import LossBreakdown
from .masking import MaskPlan
from .model import ForwardResult, MultiModalMAE, PreparedSample

ROLES = ("bottom", "middle", "top")


@dataclass(frozen=True)
class AlignmentPair:
    role: str
    teacher_tap: int
    student_tap: int


def select_alignment_layers(teacher_depth: int, student_depth: int) -> tuple[AlignmentPair, ...]:
    """Bottom = tap 0, top = final layer, middle = 3/4 of the student depth
    mapped proportionally into the teacher (24-layer teacher + 12-layer
    student gives the (18, 9) middle pair)."""
    if teacher_depth < 1 or student_depth < 1:
        raise ConfigurationError("alignment needs depth >= 1 on both models")
    s_mid = round(0.75 * student_depth)
    t_mid = round(s_mid * teacher_depth / student_depth)
    return (
        AlignmentPair("bottom", 0, 0),
        AlignmentPair("middle", t_mid, s_mid),
        AlignmentPair("top", teacher_depth, student_depth),
    )


@dataclass
class AlignmentSpec:
    pairs: tuple[AlignmentPair, ...]
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0 (0 is the diagnostic no-alignment mode)")
        roles = [p.role for p in self.pairs]
        if len(set(roles)) != len(roles):
            raise ConfigurationError(f"duplicate alignment roles: {roles}")

    @property
    def teacher_taps(self) -> tuple[int, ...]:
        return tuple(p.teacher_tap for p in self.pairs)

    @property
    def student_taps(self) -> tuple[int, ...]:
        return tuple(p.student_tap for p in self.pairs)


class AlignmentProjectors(nn.Module):
    """One trainable linear map per pair, student width -> teacher width."""

    def __init__(self, spec: AlignmentSpec, student_dim: int, teacher_dim: int, seed: int = 0):
        super().__init__()
        self.maps = nn.ModuleDict(
            {p.role: nn.Linear(student_dim, teacher_dim) for p in spec.pairs}
        )
        g = torch.Generator().manual_seed(seed)
        for lin in self.maps.values():
            bound = (6.0 / (lin.in_features + lin.out_features)) ** 0.5
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=g)
                lin.bias.zero_()

    def forward(self, role: str, h: torch.Tensor) -> torch.Tensor:
        return self.maps[role](h)


def smooth_l1(a: torch.Tensor, b: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean Smooth-L1: 0.5*d^2/delta for |d| < delta, else |d| - 0.5*delta."""
    if a.shape != b.shape:
        raise RuntimeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    d = (a - b).abs()
    return torch.where(d < delta, 0.5 * d * d / delta, d - 0.5 * delta).mean()


@dataclass
class DistillResult:
    mae: LossBreakdown
    align_terms: dict[str, torch.Tensor]  # role -> Smooth-L1 term
    align: torch.Tensor  # sum of terms
    total: torch.Tensor  # mae.total + beta * align
    student: ForwardResult


def check_compatible(teacher: MultiModalMAE, student: MultiModalMAE) -> None:
    if teacher.cfg.sizes != student.cfg.sizes:
        raise ConfigurationError(
            f"teacher token lengths {teacher.cfg.sizes} != student {student.cfg.sizes}"
        )


def distill_step(
    teacher: MultiModalMAE,
    student: MultiModalMAE,
    sample: PreparedSample,
    plan: MaskPlan,
    spec: AlignmentSpec,
    projectors: AlignmentProjectors,
    delta: float = 1.0,
) -> DistillResult:
    """One sample's combined loss. Gradients reach the student and projectors only."""
    check_compatible(teacher, student)
    with torch.no_grad():
        t_out = teacher.forward_sample(sample, plan, taps=spec.teacher_taps)
    s_out = student.forward_sample(sample, plan, taps=spec.student_taps)

    align_terms: dict[str, torch.Tensor] = {}
    for pair in spec.pairs:
        y = t_out.joint.per_layer[pair.teacher_tap]
        h = s_out.joint.per_layer[pair.student_tap]
        align_terms[pair.role] = smooth_l1(y, projectors(pair.role, h), delta)

    align = sum(align_terms.values(), start=torch.zeros((), dtype=s_out.loss.total.dtype))
    total = s_out.loss.total + spec.beta * align
    return DistillResult(
        mae=s_out.loss, align_terms=align_terms, align=align, total=total, student=s_out
    )
