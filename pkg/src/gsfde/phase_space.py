"""Fading-memory history segments and the exponentially weighted sup-norm.

A history on (-infty, 0] is encoded finitely as a uniform grid of samples on
a buffered window [-T_buf, 0] plus a closed-form tail model describing the
segment on (-infty, -T_buf].  The weight e^{q*alpha} makes deep history
numerically irrelevant for the norm while the tail keeps every integral
against an exponential-kernel delay measure exact.

Conventions:
  * alpha <= 0 measures time into the past relative to the segment head.
  * Buffers are ordered most-recent-last, so ``buffer[-1]`` is the value at
    alpha = 0.
  * The norm is the grid sup max'd with the tail's closed-form weighted sup;
    no interpolation between grid points is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SegmentError",
    "InitialDataError",
    "TailModel",
    "HistorySegment",
    "segment_norm",
    "evolve_segment",
    "from_initial_data",
    "check_segment_norm_bound",
    "NormBoundCheck",
]

# Oldest samples are merged into the tail only when the weighted mismatch is
# below this fraction of the current norm; otherwise the buffer grows.
ABSORB_REL_TOL = 1e-14

# Default buffer depth: past this age the weight alone drops below 1e-12.
NORM_WEIGHT_FLOOR = 1e-12


class SegmentError(ValueError):
    """Raised for structurally invalid segments or bad segment operations."""


class InitialDataError(ValueError):
    """Raised when an initial-data description cannot be realized exactly."""


def _as_vector(x, dim: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = np.full(dim, float(v))
    if v.shape != (dim,):
        raise SegmentError(f"expected a value of dimension {dim}, got shape {v.shape}")
    return v


def _mag(v: np.ndarray) -> float:
    """Euclidean magnitude, safe against underflow of squared entries."""
    v = np.atleast_1d(v)
    if v.shape[0] == 1:
        return abs(float(v[0]))
    m = float(np.max(np.abs(v)))
    if m == 0.0 or not np.isfinite(m):
        return m
    y = v / m
    return m * float(np.sqrt(y @ y))


def _row_mags(x: np.ndarray) -> np.ndarray:
    """Per-row Euclidean magnitudes of an (n, d) array, underflow-safe."""
    if x.shape[1] == 1:
        return np.abs(x[:, 0])
    m = np.max(np.abs(x), axis=1)
    safe = np.where(m > 0, m, 1.0)
    y = x / safe[:, None]
    return safe * np.sqrt(np.einsum("ij,ij->i", y, y))


@dataclass(frozen=True)
class TailModel:
    """Closed-form description of a segment on (-infty, -T_buf].

    ``kind`` is one of ``"zero"``, ``"constant"``, ``"exp"``.  The constant
    and exponential variants evaluate to ``coeff * exp(rate * alpha)`` with
    ``rate`` fixed to 0 for the constant variant.  Any real rate is accepted
    here; whether the weighted sup stays finite depends on q and is enforced
    when the tail is attached to a segment (q + rate >= 0).
    """

    kind: str
    coeff: np.ndarray
    rate: float = 0.0

    @staticmethod
    def zero(dim: int = 1) -> "TailModel":
        return TailModel("zero", np.zeros(dim), 0.0)

    @staticmethod
    def constant(c, dim: int = 1) -> "TailModel":
        return TailModel("constant", _as_vector(c, dim), 0.0)

    @staticmethod
    def exp_decay(c, rate: float, dim: int = 1) -> "TailModel":
        return TailModel("exp", _as_vector(c, dim), float(rate))

    @property
    def dim(self) -> int:
        return self.coeff.shape[0]

    def value_at(self, alpha: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(self.coeff)
        return self.coeff * np.exp(self.rate * alpha)

    def weighted_sup(self, q: float, horizon: float) -> float:
        """sup over alpha <= -horizon of e^{q*alpha} |tail(alpha)|."""
        if self.kind == "zero":
            return 0.0
        s = q + self.rate
        mag = _mag(self.coeff)
        if s > 0.0:
            return mag * np.exp(-s * horizon)
        if s == 0.0:
            return mag
        raise SegmentError(
            f"tail rate {self.rate} below -q={-q}: weighted sup is infinite"
        )

    def sup_abs(self, horizon: float) -> float:
        """Unweighted sup of |tail| on (-infty, -horizon]; may be inf."""
        if self.kind == "zero":
            return 0.0
        mag = _mag(self.coeff)
        if self.rate > 0.0:
            return mag * np.exp(-self.rate * horizon)
        if self.rate == 0.0:
            return mag
        return float("inf")

    def shifted(self, delta: float) -> "TailModel":
        """The same absolute-time tail re-anchored to a head advanced by delta."""
        if self.kind == "zero" or self.rate == 0.0:
            return self
        return TailModel(self.kind, self.coeff * np.exp(self.rate * delta), self.rate)

    def scaled(self, a: float) -> "TailModel":
        if self.kind == "zero":
            return self
        return TailModel(self.kind, a * self.coeff, self.rate)

    def combined(self, other: "TailModel", sign: float = 1.0) -> "TailModel":
        """Pointwise self + sign*other, within the closed family only."""
        if other.kind == "zero":
            return self
        if self.kind == "zero":
            return other.scaled(sign)
        if self.rate != other.rate:
            raise SegmentError(
                "tails with distinct rates cannot be combined in closed form "
                f"({self.rate} vs {other.rate})"
            )
        kind = "constant" if self.rate == 0.0 else "exp"
        return TailModel(kind, self.coeff + sign * other.coeff, self.rate)


class HistorySegment:
    """A finitely encoded element of the fading-memory phase space.

    Immutable: :meth:`evolve` returns a new segment.  Safe to share across
    workers.
    """

    __slots__ = ("q", "grid_step", "buffer", "tail", "t_anchor")

    def __init__(self, q, grid_step, buffer, tail=None, t_anchor=0.0):
        buffer = np.atleast_1d(np.asarray(buffer, dtype=float))
        if buffer.ndim == 1:
            buffer = buffer[:, None]
        if buffer.ndim != 2 or buffer.shape[0] == 0:
            raise SegmentError("buffer must be a non-empty (n, d) array")
        if not np.all(np.isfinite(buffer)):
            raise SegmentError("buffer contains non-finite samples")
        if not q > 0:
            raise SegmentError(f"fading rate q must be positive, got {q}")
        if not grid_step > 0:
            raise SegmentError(f"grid step must be positive, got {grid_step}")
        if tail is None:
            tail = TailModel.zero(buffer.shape[1])
        if tail.dim != buffer.shape[1]:
            raise SegmentError("tail dimension does not match buffer dimension")
        if tail.kind != "zero" and q + tail.rate < 0:
            raise SegmentError(
                f"tail rate {tail.rate} incompatible with q={q}: "
                "e^{q*alpha}|tail| must stay bounded into the past"
            )
        object.__setattr__(self, "q", float(q))
        object.__setattr__(self, "grid_step", float(grid_step))
        object.__setattr__(self, "buffer", buffer)
        object.__setattr__(self, "tail", tail)
        object.__setattr__(self, "t_anchor", float(t_anchor))

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("HistorySegment is immutable")

    @property
    def dim(self) -> int:
        return self.buffer.shape[1]

    @property
    def n_samples(self) -> int:
        return self.buffer.shape[0]

    @property
    def t_buf(self) -> float:
        return (self.n_samples - 1) * self.grid_step

    @property
    def head(self) -> np.ndarray:
        return self.buffer[-1]

    def alphas(self) -> np.ndarray:
        n = self.n_samples
        return -self.grid_step * np.arange(n - 1, -1, -1)

    def value_at(self, alpha: float) -> np.ndarray:
        """Segment value at lag alpha <= 0 (nearest grid point on the buffer)."""
        if alpha > 1e-12:
            raise SegmentError(f"alpha must be <= 0, got {alpha}")
        k = int(round(-alpha / self.grid_step))
        if k < self.n_samples:
            return self.buffer[self.n_samples - 1 - k]
        return self.tail.value_at(alpha)

    def norm(self) -> float:
        mags = _row_mags(self.buffer)
        weighted = np.exp(self.q * self.alphas()) * mags
        return float(max(weighted.max(), self.tail.weighted_sup(self.q, self.t_buf)))

    def sup_abs(self) -> float:
        mags = _row_mags(self.buffer)
        return float(max(mags.max(), self.tail.sup_abs(self.t_buf)))

    def evolve(self, new_value, target_horizon: float | None = None) -> "HistorySegment":
        """Append ``new_value`` at alpha = 0, advancing the anchor one step.

        The shifted oldest samples are merged into the tail only when the
        tail reproduces them to within ``ABSORB_REL_TOL`` of the current
        norm; otherwise the buffered window grows so the norm and delay
        integrals are never silently corrupted.
        """
        v = _as_vector(new_value, self.dim)
        if not np.all(np.isfinite(v)):
            raise SegmentError("cannot evolve with a non-finite value")
        buf = np.vstack([self.buffer, v[None, :]])
        tail = self.tail.shifted(self.grid_step)
        if target_horizon is None:
            target_horizon = self.t_buf
        n_target = int(round(target_horizon / self.grid_step)) + 1
        scale = max(self.norm(), _mag(v), 1e-300)
        while buf.shape[0] > n_target:
            alpha_old = -(buf.shape[0] - 1) * self.grid_step
            mismatch = _mag(buf[0] - tail.value_at(alpha_old))
            if np.exp(self.q * alpha_old) * mismatch <= ABSORB_REL_TOL * scale:
                buf = buf[1:]
            else:
                break
        return HistorySegment(self.q, self.grid_step, buf, tail,
                              self.t_anchor + self.grid_step)

    def scaled(self, a: float) -> "HistorySegment":
        return HistorySegment(self.q, self.grid_step, a * self.buffer,
                              self.tail.scaled(a), self.t_anchor)

    def combined(self, other: "HistorySegment", sign: float = 1.0) -> "HistorySegment":
        """Pointwise self + sign*other for segments sharing grid and tail family."""
        if abs(self.grid_step - other.grid_step) > 1e-15:
            raise SegmentError("segments have different grid steps")
        if self.q != other.q or self.dim != other.dim:
            raise SegmentError("segments live in different phase spaces")
        a, b = self.buffer, other.buffer
        if a.shape[0] != b.shape[0]:
            # Pad the shorter buffer from its own tail so both windows agree.
            n = max(a.shape[0], b.shape[0])
            a = _padded(self, n)
            b = _padded(other, n)
        return HistorySegment(self.q, self.grid_step, a + sign * b,
                              self.tail.combined(other.tail, sign), self.t_anchor)

    def __add__(self, other):
        return self.combined(other, 1.0)

    def __sub__(self, other):
        return self.combined(other, -1.0)

    def __mul__(self, a: float):
        return self.scaled(float(a))

    __rmul__ = __mul__

    def __repr__(self):  # pragma: no cover - debug aid
        return (f"HistorySegment(q={self.q}, dt={self.grid_step}, "
                f"n={self.n_samples}, tail={self.tail.kind}, "
                f"anchor={self.t_anchor})")


def _padded(seg: HistorySegment, n: int) -> np.ndarray:
    """Buffer of seg extended to n samples, filling old slots from the tail."""
    k = n - seg.n_samples
    if k <= 0:
        return seg.buffer
    alphas = -seg.grid_step * np.arange(n - 1, seg.n_samples - 1, -1)
    pad = np.stack([seg.tail.value_at(a) for a in alphas])
    return np.vstack([pad, seg.buffer])


def segment_norm(seg: HistorySegment) -> float:
    """Weighted sup-norm sup_{alpha<=0} e^{q*alpha} |seg(alpha)|.

    The buffer contributes its grid sup, the tail its closed-form weighted
    sup; the result is always finite for a valid segment.
    """
    return seg.norm()


def evolve_segment(seg: HistorySegment, new_value) -> HistorySegment:
    """Functional alias for :meth:`HistorySegment.evolve`."""
    return seg.evolve(new_value)


def default_horizon(q: float, grid_step: float, min_horizon: float = 0.0) -> float:
    """Buffer depth where the norm weight e^{-q t} falls below 1e-12."""
    t = max(np.log(1.0 / NORM_WEIGHT_FLOOR) / q, min_horizon)
    return np.ceil(t / grid_step - 1e-9) * grid_step


def from_initial_data(spec, q: float, dim: int = 1, grid_step: float = 1e-3,
                      horizon: float | None = None) -> HistorySegment:
    """Build the initial history segment from a parametric description.

    ``spec`` is a mapping with ``kind`` in {"constant", "exp_decay",
    "samples"}:

      constant   -- {"kind": "constant", "value": v}
      exp_decay  -- {"kind": "exp_decay", "value": v, "rate": r > 0},
                    meaning value * e^{r*alpha} (decaying into the past)
      samples    -- {"kind": "samples", "samples": [...], "tail": {...}}
                    with samples most-recent-last on the grid and an optional
                    tail of kind zero/constant/exp_decay

    The supported forms are closed under the tail models, so the returned
    segment's norm equals the analytic norm of the description exactly.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InitialDataError("initial data spec must be a mapping with a 'kind'")
    kind = spec["kind"]
    if horizon is None:
        horizon = default_horizon(q, grid_step)
    n = int(round(horizon / grid_step)) + 1
    alphas = -grid_step * np.arange(n - 1, -1, -1)

    if kind == "constant":
        v = _as_vector(spec.get("value", 0.0), dim)
        buf = np.tile(v, (n, 1))
        return HistorySegment(q, grid_step, buf, TailModel.constant(v, dim))
    if kind == "exp_decay":
        rate = float(spec.get("rate", 0.0))
        if rate <= 0:
            raise InitialDataError(
                f"exp_decay initial data needs a positive rate, got {rate}"
            )
        v = _as_vector(spec.get("value", 0.0), dim)
        buf = v[None, :] * np.exp(rate * alphas)[:, None]
        return HistorySegment(q, grid_step, buf, TailModel.exp_decay(v, rate, dim))
    if kind == "samples":
        samples = np.asarray(spec.get("samples", []), dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.shape[0] == 0:
            raise InitialDataError("samples initial data needs at least one sample")
        tail_spec = spec.get("tail", {"kind": "zero"})
        tkind = tail_spec.get("kind", "zero")
        if tkind == "zero":
            tail = TailModel.zero(samples.shape[1])
        elif tkind == "constant":
            tail = TailModel.constant(tail_spec.get("value", 0.0), samples.shape[1])
        elif tkind in ("exp", "exp_decay"):
            tail = TailModel.exp_decay(tail_spec.get("value", 0.0),
                                       float(tail_spec.get("rate", 1.0)),
                                       samples.shape[1])
        else:
            raise InitialDataError(f"unknown tail kind {tkind!r}")
        return HistorySegment(q, grid_step, samples, tail)
    raise InitialDataError(f"unknown initial data kind {kind!r}")


@dataclass(frozen=True)
class NormBoundCheck:
    """Outcome of the pathwise segment-norm inequality check."""

    holds: bool
    min_slack: float
    argmin_time: float
    slacks: np.ndarray

    def __bool__(self) -> bool:
        return self.holds


def rolling_norms(times, values, zeta: HistorySegment) -> np.ndarray:
    """Exact grid-sup segment norms ||X_t||_q along a trajectory.

    Uses the identity: the full-history grid sup at time t equals
    max(e^{-q t} ||zeta||_q, max_{0<s<=t} e^{-q(t-s)} |X(s)|), applied as a
    one-step contraction recursion.  This equals segment_norm of the segment
    evolved sample-by-sample from zeta (same grid, exact tail bookkeeping).
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if len(times) != vals.shape[0]:
        raise SegmentError("times and values disagree in length")
    dt = zeta.grid_step
    if len(times) > 1:
        steps = np.diff(times)
        if not np.allclose(steps, dt, rtol=0, atol=1e-9 * max(dt, 1.0)):
            raise SegmentError("trajectory grid must match the segment grid step")
    mags = _row_mags(vals)
    if abs(times[0]) > 1e-12:
        raise SegmentError("trajectory must start at t=0")
    if _mag(vals[0] - zeta.head) > 1e-9 * max(1.0, float(mags[0])):
        raise SegmentError("trajectory does not start from the initial segment head")
    decay = np.exp(-zeta.q * dt)
    out = np.empty(len(times))
    m = zeta.norm()
    out[0] = m
    for i in range(1, len(times)):
        m = max(decay * m, mags[i])
        out[i] = m
    return out


def check_segment_norm_bound(times, values, zeta: HistorySegment,
                             p: float = 2.0, lam: float | None = None) -> NormBoundCheck:
    """Check ||X_t||_q^p <= e^{-lam t} ||zeta||_q^p + sup_{0<s<=t} |X(s)|^p.

    Evaluated at every grid time of the trajectory; requires lam < p*q.
    Returns whether the inequality holds throughout and the minimum slack
    (RHS - LHS).
    """
    q = zeta.q
    if lam is None:
        lam = 0.5 * p * q
    if not lam < p * q:
        raise SegmentError(f"decay rate lam={lam} must be below p*q={p * q}")
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    norms = rolling_norms(times, vals, zeta)
    mags = _row_mags(vals)
    sup_p = np.zeros(len(times))
    # sup over 0 < s <= t excludes the t=0 sample.
    if len(times) > 1:
        sup_p[1:] = np.maximum.accumulate(mags[1:] ** p)
    rhs = np.exp(-lam * times) * zeta.norm() ** p + sup_p
    lhs = norms ** p
    slacks = rhs - lhs
    i = int(np.argmin(slacks))
    tol = 1e-12 * max(1.0, float(np.max(rhs)))
    return NormBoundCheck(bool(slacks[i] >= -tol), float(slacks[i]),
                          float(times[i]), slacks)
