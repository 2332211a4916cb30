"""Loss weights, per-iteration loss report and the weighted total."""
from dataclasses import dataclass, field
from typing import List, Optional

from gckd.errors import ConfigError

AUX_PROVIDERS = ("none", "source_itc")


@dataclass
class LossConfig:
    """Loss hyperparameters."""

    tau: float = 0.07  # softmax temperature
    delta: float = 0.8  # positive-pair similarity threshold
    lambda1: float = 0.5  # cd-itc weight
    lambda2: float = 0.5  # cd-itm weight
    lambda3: float = 1.0  # auxiliary weight
    aux: str = "none"  # none | source_itc
    distill_alpha: float = 0.4  # soft teacher share of the cd-itc targets; the rest goes to entries above delta

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"loss.tau must be positive, got {self.tau}")
        if not -1.0 < self.delta < 1.0:
            raise ConfigError(f"loss.delta must lie in (-1, 1), got {self.delta}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss.{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.distill_alpha <= 1.0:
            raise ConfigError(f"loss.distill_alpha must lie in [0, 1], got {self.distill_alpha}")
        if self.aux not in AUX_PROVIDERS:
            raise ConfigError(f"loss.aux must be one of {AUX_PROVIDERS}, got {self.aux!r}")


@dataclass
class LossReport:
    cd_itc: float = 0.0
    cd_itm: float = 0.0
    aux: float = 0.0
    total: float = 0.0
    n_positive: int = 0
    n_negative: int = 0
    n_skipped: int = 0  # images without any matching pair
    skipped: List[str] = field(default_factory=list)  # names of skipped terms

    def to_record(self) -> dict:
        return {
            "cd_itc": self.cd_itc,
            "cd_itm": self.cd_itm,
            "aux": self.aux,
            "total": self.total,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "n_skipped": self.n_skipped,
            "skipped": list(self.skipped),
        }


def total(cd_itc: Optional[float], cd_itm: Optional[float], aux: Optional[float], cfg: LossConfig,
          report: Optional[LossReport] = None) -> LossReport:
    """Weighted sum lambda1*cd_itc + lambda2*cd_itm + lambda3*aux; None parts count as skipped (0)."""
    for name in ("lambda1", "lambda2", "lambda3"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"loss.{name} must be non-negative, got {getattr(cfg, name)}")
    report = report or LossReport()
    parts = {"cd_itc": cd_itc, "cd_itm": cd_itm, "aux": aux}
    for name, value in parts.items():
        if value is None and name != "aux" and name not in report.skipped:
            report.skipped.append(name)
    report.cd_itc = float(cd_itc or 0.0)
    report.cd_itm = float(cd_itm or 0.0)
    report.aux = float(aux or 0.0)
    report.total = cfg.lambda1 * report.cd_itc + cfg.lambda2 * report.cd_itm + cfg.lambda3 * report.aux
    return report
