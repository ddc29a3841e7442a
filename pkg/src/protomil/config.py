"""Training configuration with protocol defaults.

Defaults reproduce the training protocol at desk scale: Adam with decoupled
weight decay 1e-5, learning rate cosine-decayed from 3e-4 to 1e-4 over at
most 200 epochs, early stopping patience 20, and prototype supervision
weight 0.1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass
class TrainConfig:
    # optimizer protocol
    lr_init: float = 3e-4
    lr_final: float = 1e-4
    weight_decay: float = 1e-5
    max_epochs: int = 200
    patience: int = 20
    lam: float = 0.1                 # prototype supervision weight

    # architecture
    d: int = 32                      # model dim, divisible by 4 and n_heads
    k_sup: int = 4                   # prior experts
    k_free: int = 4                  # adaptive experts (0 disables the path)
    tau_cos: float = 0.1
    tau_dot: float = 0.0             # 0 means sqrt(d)
    tau_proto: float = 0.07
    n_heads: int = 4

    # task and component toggles
    task: str = "classification"     # or "survival"
    use_spe: bool = True
    use_maps: bool = True
    use_hcma: bool = True
    use_text: bool = True

    # batching
    accum_bags: int = 8              # classification optimizer window
    cox_batch: int = 16              # 0 = exact full-cohort survival batches
    cox_eps: float = 1e-8

    # resolved from data at train time unless set explicitly
    d_in: int = 0                    # 0 means "take from the cohort"
    n_classes: int = 0               # 0 means "take from the cohort"

    seed: int = 0

    def validate(self):
        if self.lr_init <= 0 or self.lr_final <= 0:
            raise ValueError("lr_init and lr_final must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [1, max_epochs]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.d % 4 != 0 or self.d < 4:
            raise ValueError("d must be a positive multiple of 4")
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by "
                             f"n_heads={self.n_heads}")
        if self.k_sup < 1:
            raise ValueError("k_sup must be >= 1")
        if self.k_free < 0:
            raise ValueError("k_free must be >= 0")
        if self.tau_cos <= 0 or self.tau_dot < 0 or self.tau_proto <= 0:
            raise ValueError("temperatures must be positive "
                             "(tau_dot may be 0 for sqrt(d))")
        if self.task not in ("classification", "survival"):
            raise ValueError(f"task must be classification or survival, "
                             f"got {self.task!r}")
        if self.use_hcma and not self.use_text:
            raise ValueError("use_hcma requires use_text")
        if self.accum_bags < 1:
            raise ValueError("accum_bags must be >= 1")
        if self.cox_batch < 0:
            raise ValueError("cox_batch must be >= 0")
        return self

    @property
    def tau_dot_resolved(self) -> float:
        return self.tau_dot if self.tau_dot > 0 else float(self.d) ** 0.5

    def resolved(self, d_in: int, n_classes: int) -> "TrainConfig":
        """Copy with data-dependent dimensions filled in."""
        return replace(self,
                       d_in=self.d_in or int(d_in),
                       n_classes=self.n_classes or int(n_classes)).validate()

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config field(s): "
                             f"{', '.join(sorted(unknown))}")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return {name: getattr(self, name)
                for name in self.__dataclass_fields__}
