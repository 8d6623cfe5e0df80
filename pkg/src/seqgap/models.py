"""Per-stream observation models.

Each data stream carries a simple null/alternative pair from a closed-form
family.  A signal stream generates under the alternative, a noise stream
under the null.  Everything downstream (log-likelihood ratios, information
numbers, sampling) is derived from these pairs.

Sampling protocol: every observation consumes exactly one uniform variate,
mapped through the family's inverse CDF.  Block sampling draws the uniforms
for a (steps, J) block in row-major order — one row per time step — so any
consumer that respects the protocol sees the identical sample path for the
same generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

GAUSSIAN_MEAN = "gaussian-mean"
BERNOULLI = "bernoulli"

_FAMILIES = (GAUSSIAN_MEAN, BERNOULLI)


@dataclass(frozen=True)
class InfoNumbers:
    """Kullback-Leibler information numbers and increment variances.

    ``i0`` is the expected one-step LLR drift under the null (sign flipped,
    so it is positive), ``i1`` the drift under the alternative.  ``v0`` and
    ``v1`` are the corresponding increment variances.
    """

    i0: float
    i1: float
    v0: float
    v1: float


@dataclass(frozen=True)
class StreamModel:
    """A simple hypothesis pair for one stream.

    family "gaussian-mean": unit-variance normal with mean ``null`` vs
    mean ``alt``.  family "bernoulli": success probability ``null`` vs
    ``alt``; both must lie strictly inside (0, 1).  The two parameters
    must differ, otherwise the pair is untestable.
    """

    family: str
    null: float
    alt: float

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(
                f"unknown family {self.family!r}; expected one of {_FAMILIES}"
            )
        for name, value in (("null", self.null), ("alt", self.alt)):
            if not math.isfinite(value):
                raise ValueError(f"{name} parameter must be finite, got {value!r}")
        if self.null == self.alt:
            raise ValueError("null and alt parameters must differ")
        if self.family == BERNOULLI:
            for name, value in (("null", self.null), ("alt", self.alt)):
                if not 0.0 < value < 1.0:
                    raise ValueError(
                        f"bernoulli {name} parameter must be in (0, 1), got {value}"
                    )

    # The one-step LLR of both shipped families is affine in the
    # observation: llr(x) = slope * x + offset.  The vectorized scan path
    # relies on this.

    @property
    def llr_slope(self) -> float:
        if self.family == GAUSSIAN_MEAN:
            return self.alt - self.null
        p0, p1 = self.null, self.alt
        return math.log(p1 / p0) - math.log((1.0 - p1) / (1.0 - p0))

    @property
    def llr_offset(self) -> float:
        if self.family == GAUSSIAN_MEAN:
            return (self.null**2 - self.alt**2) / 2.0
        return math.log((1.0 - self.alt) / (1.0 - self.null))

    def llr_increment(self, x: float) -> float:
        """One-observation log-likelihood ratio log f_alt(x) / f_null(x)."""
        if self.family == BERNOULLI and x not in (0.0, 1.0):
            raise ValueError(f"bernoulli observation must be 0 or 1, got {x!r}")
        if not math.isfinite(x):
            raise ValueError(f"observation must be finite, got {x!r}")
        return self.llr_slope * float(x) + self.llr_offset

    def state_param(self, state: str) -> float:
        if state == "null":
            return self.null
        if state == "alt":
            return self.alt
        raise ValueError(f"state must be 'null' or 'alt', got {state!r}")

    def from_uniform(self, u: float, state: str) -> float:
        """Map one uniform variate to an observation under ``state``."""
        param = self.state_param(state)
        if self.family == GAUSSIAN_MEAN:
            return param + float(ndtri(u))
        return 1.0 if u < param else 0.0

    def sample(self, state: str, rng: np.random.Generator) -> float:
        """Draw one observation, consuming exactly one uniform from ``rng``."""
        return self.from_uniform(float(rng.random()), state)

    def info_numbers(self) -> InfoNumbers:
        """Closed-form KL information numbers and increment variances."""
        if self.family == GAUSSIAN_MEAN:
            theta = self.alt - self.null
            return InfoNumbers(
                i0=theta**2 / 2.0, i1=theta**2 / 2.0, v0=theta**2, v1=theta**2
            )
        p0, p1 = self.null, self.alt
        q0, q1 = 1.0 - p0, 1.0 - p1
        i1 = p1 * math.log(p1 / p0) + q1 * math.log(q1 / q0)
        i0 = p0 * math.log(p0 / p1) + q0 * math.log(q0 / q1)
        slope = self.llr_slope
        return InfoNumbers(i0=i0, i1=i1, v0=p0 * q0 * slope**2, v1=p1 * q1 * slope**2)


@dataclass(frozen=True)
class StreamProfile:
    """The J ≥ 2 stream models under test, in stream-label order.

    Stream labels are 1-based throughout the package: ``models[j - 1]`` is
    the model for stream j.
    """

    models: tuple[StreamModel, ...]

    def __post_init__(self) -> None:
        if len(self.models) < 2:
            raise ValueError(f"need at least 2 streams, got {len(self.models)}")
        for model in self.models:
            if not isinstance(model, StreamModel):
                raise TypeError(f"expected StreamModel, got {type(model).__name__}")

    @classmethod
    def homogeneous(cls, model: StreamModel, count: int) -> StreamProfile:
        """Profile with ``count`` identical streams."""
        return cls(models=(model,) * int(count))

    @property
    def j(self) -> int:
        """Number of streams."""
        return len(self.models)

    def validate_signal_set(self, members) -> frozenset[int]:
        """Normalize an iterable of 1-based stream labels to a frozenset.

        Rejects labels outside 1..J.  The empty set and the full set are
        both legal signal configurations.
        """
        truth = frozenset(int(m) for m in members)
        bad = [m for m in truth if not 1 <= m <= self.j]
        if bad:
            raise ValueError(
                f"signal labels must be in 1..{self.j}, got {sorted(bad)}"
            )
        return truth

    def signal_mask(self, truth: frozenset[int]) -> np.ndarray:
        """Boolean (J,) array; True where the stream is a signal."""
        truth = self.validate_signal_set(truth)
        mask = np.zeros(self.j, dtype=bool)
        for label in truth:
            mask[label - 1] = True
        return mask

    def _family_columns(self, family: str) -> np.ndarray:
        return np.array(
            [k for k, m in enumerate(self.models) if m.family == family], dtype=int
        )

    def state_params(self, truth: frozenset[int]) -> np.ndarray:
        """(J,) array of the active-state parameter of every stream."""
        mask = self.signal_mask(truth)
        null = np.array([m.null for m in self.models])
        alt = np.array([m.alt for m in self.models])
        return np.where(mask, alt, null)

    def sample_block(
        self, truth: frozenset[int], steps: int, rng: np.random.Generator
    ) -> np.ndarray:
        """Draw a (steps, J) observation block under the given signal set.

        Consumes steps * J uniforms in row-major (time, stream) order and
        maps each through its stream's inverse CDF, so chunked draws from
        the same generator concatenate to the same path as one big draw.
        """
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        params = self.state_params(truth)
        u = rng.random(size=(int(steps), self.j))
        x = np.empty_like(u)
        cols = self._family_columns(GAUSSIAN_MEAN)
        if cols.size:
            x[:, cols] = params[cols] + ndtri(u[:, cols])
        cols = self._family_columns(BERNOULLI)
        if cols.size:
            x[:, cols] = (u[:, cols] < params[cols]).astype(float)
        return x

    def increments(self, x: np.ndarray) -> np.ndarray:
        """Per-stream LLR increments for an observation block.

        ``x`` has shape (..., J); the result has the same shape.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.j:
            raise ValueError(
                f"last axis must have length {self.j}, got {x.shape[-1]}"
            )
        slope = np.array([m.llr_slope for m in self.models])
        offset = np.array([m.llr_offset for m in self.models])
        return x * slope + offset

    def info_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (i0, i1, v0, v1) arrays across streams."""
        infos = [m.info_numbers() for m in self.models]
        return (
            np.array([f.i0 for f in infos]),
            np.array([f.i1 for f in infos]),
            np.array([f.v0 for f in infos]),
            np.array([f.v1 for f in infos]),
        )


@dataclass(frozen=True)
class WorstCaseInfo:
    """Worst-case (smallest) information numbers over a signal configuration.

    ``eta0`` is the minimum null-side information over noise streams,
    ``eta1`` the minimum alternative-side information over signal streams.
    When a side is empty its minimum is vacuously +inf and the matching
    ``*_defined`` flag is False.
    """

    eta0: float
    eta1: float
    eta0_defined: bool
    eta1_defined: bool


def eta(profile: StreamProfile, truth: frozenset[int]) -> WorstCaseInfo:
    """Worst-case information numbers for a profile and signal set."""
    truth = profile.validate_signal_set(truth)
    i0, i1, _, _ = profile.info_table()
    noise = [k for k in range(profile.j) if (k + 1) not in truth]
    signal = [k for k in range(profile.j) if (k + 1) in truth]
    eta0 = float(np.min(i0[noise])) if noise else math.inf
    eta1 = float(np.min(i1[signal])) if signal else math.inf
    return WorstCaseInfo(
        eta0=eta0,
        eta1=eta1,
        eta0_defined=bool(noise),
        eta1_defined=bool(signal),
    )
