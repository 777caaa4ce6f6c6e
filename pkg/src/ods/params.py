from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterDomainError

DEFAULT_STREAM_CAP = 1024


@dataclass(frozen=True, order=True)
class ParamVector:
    """Application-level tuning knobs for one transfer.

    cc
        files moved concurrently
    p
        parallel data channels per file
    pp
        outstanding (pipelined) requests per channel
    """

    cc: int = 1
    p: int = 1
    pp: int = 1

    def __post_init__(self):
        for name in ("cc", "p", "pp"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ParameterDomainError(f"{name} must be an integer, got {v!r}", fields=[name])
            if v < 1:
                raise ParameterDomainError(f"{name} must be >= 1, got {v}", fields=[name])

    @property
    def streams(self) -> int:
        return self.cc * self.p

    def check_cap(self, stream_cap: int = DEFAULT_STREAM_CAP) -> "ParamVector":
        if self.streams > stream_cap:
            raise ParameterDomainError(
                f"cc*p = {self.streams} exceeds the global stream cap {stream_cap}",
                fields=["cc", "p"],
            )
        return self

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.cc, self.p, self.pp)

    def to_dict(self) -> dict:
        return {"cc": self.cc, "p": self.p, "pp": self.pp}

    @classmethod
    def from_dict(cls, d) -> "ParamVector":
        try:
            return cls(int(d.get("cc", 1)), int(d.get("p", 1)), int(d.get("pp", 1)))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ParameterDomainError(f"bad parameter vector {d!r}: {exc}") from None

    def __str__(self) -> str:
        return f"(cc={self.cc}, p={self.p}, pp={self.pp})"
