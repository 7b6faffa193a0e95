import os
from dataclasses import dataclass
from typing import Optional

MODES = ("sam", "stub")

# refuses images beyond this edge length by default; huge frames belong in
# client-side tiles
DEFAULT_MAX_DIM = 4096
DEFAULT_PORT = 8500


@dataclass(frozen=True)
class ServiceConfig:
    """Runtime settings. Stub mode needs nothing; sam mode needs a
    checkpoint to load."""

    checkpoint: Optional[str] = None
    device: str = "cpu"
    port: int = DEFAULT_PORT
    mode: str = "stub"
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "sam" and not self.checkpoint:
            raise ValueError("sam mode requires a checkpoint path")
        if self.port <= 0 or self.max_dim <= 0:
            raise ValueError("port and max_dim must be positive")

    @classmethod
    def from_env(cls, env=os.environ) -> "ServiceConfig":
        """Settings from SAM_SERVICE_* variables; unset ones keep defaults."""
        return cls(
            checkpoint=env.get("SAM_SERVICE_CHECKPOINT") or None,
            device=env.get("SAM_SERVICE_DEVICE", "cpu"),
            port=int(env.get("SAM_SERVICE_PORT", DEFAULT_PORT)),
            mode=env.get("SAM_SERVICE_MODE", "stub"),
            max_dim=int(env.get("SAM_SERVICE_MAX_DIM", DEFAULT_MAX_DIM)),
        )
