"""Domain frames and the seeded random-stream contract.

A :class:`PopulationFrame` holds the unit-level study variable and covariates
for the whole finite population; a :class:`SampleFrame` holds the sampled
subset together with inclusion probabilities, design and imputation weights,
response indicators and the observed zero indicator. Frames are immutable
after construction and safe to share across threads. Every stochastic
operation in the package takes an explicit :class:`RandomStream` (or an
already-instantiated numpy Generator) so that runs are reproducible.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FrameError",
    "NotObservedError",
    "PopulationFrame",
    "SampleFrame",
    "RandomStream",
    "as_generator",
    "build_population",
    "derive_eta",
]

_MASK63 = (1 << 63) - 1


class FrameError(ValueError):
    """Invalid frame construction (dimension mismatch, non-finite, ...)."""


class NotObservedError(LookupError):
    """Queried the zero indicator of a unit whose value was not observed."""


def _as_float_matrix(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise FrameError(f"{name} must be a vector or matrix, got ndim={arr.ndim}")
    return arr


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PopulationFrame:
    """Unit-level arrays for a finite population of ``n_units`` units.

    ``y`` may contain exact zeros (they are data, not missingness), ``z`` are
    the regression covariates, ``u`` the covariates of the nonzero-probability
    model, ``v`` the known positive heteroscedasticity constants and
    ``stratum`` integer stratum labels (a single stratum is allowed).
    """

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    stratum: np.ndarray

    def __post_init__(self):
        y = _freeze(np.asarray(self.y, dtype=np.float64))
        z = _freeze(_as_float_matrix(self.z, "z"))
        u = _freeze(_as_float_matrix(self.u, "u"))
        v = _freeze(np.asarray(self.v, dtype=np.float64))
        stratum = _freeze(np.asarray(self.stratum, dtype=np.int64))
        n = y.shape[0]
        if n == 0:
            raise FrameError("population is empty")
        for name, arr in (("z", z), ("u", u), ("v", v), ("stratum", stratum)):
            if arr.shape[0] != n:
                raise FrameError(
                    f"dimension mismatch: y has {n} rows, {name} has {arr.shape[0]}"
                )
        for name, arr in (("y", y), ("z", z), ("u", u), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise FrameError(f"non-finite value in {name}")
        if np.any(v <= 0.0):
            raise FrameError("non-positive v")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "stratum", stratum)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_z(self) -> int:
        return self.z.shape[1]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    def to_json_bytes(self) -> bytes:
        return _dump_frame(
            {"kind": "population", **{k: getattr(self, k) for k in ("y", "z", "u", "v", "stratum")}}
        )

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "PopulationFrame":
        d = _load_frame(blob, "population")
        return cls(y=d["y"], z=d["z"], u=d["u"], v=d["v"], stratum=d["stratum"])


@dataclass(frozen=True)
class SampleFrame:
    """Sampled subset of a population with design and response metadata.

    ``members`` indexes the parent population. Design weights are stored as
    the IEEE quotient ``d = 1/pi`` computed at construction; a bootstrap
    replicate may override ``d`` (and ``omega``) with multiplicity-scaled
    weights, in which case ``d`` no longer inverts ``pi``. The observed zero
    indicator ``eta`` is defined exactly on respondents and NaN elsewhere.
    """

    parent: PopulationFrame
    members: np.ndarray
    pi: np.ndarray
    omega: np.ndarray
    r: np.ndarray
    eta: np.ndarray
    d: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        members = _freeze(np.asarray(self.members, dtype=np.int64))
        n = members.shape[0]
        if n == 0:
            raise FrameError("sample is empty")
        if members.min() < 0 or members.max() >= self.parent.n_units:
            raise FrameError("sample member index out of range")
        pi = _freeze(np.asarray(self.pi, dtype=np.float64))
        omega = _freeze(np.asarray(self.omega, dtype=np.float64))
        r = _freeze(np.asarray(self.r, dtype=np.int64))
        eta = _freeze(np.asarray(self.eta, dtype=np.float64))
        if pi.shape[0] != n:
            raise FrameError("dimension mismatch on pi")
        if np.any(pi <= 0.0) or np.any(pi > 1.0):
            raise FrameError("inclusion probabilities must lie in (0, 1]")
        d = self.d
        if d is None:
            d = 1.0 / pi
        d = _freeze(np.asarray(d, dtype=np.float64))
        for name, arr in (("omega", omega), ("r", r), ("eta", eta), ("d", d)):
            if arr.shape[0] != n:
                raise FrameError(f"dimension mismatch on {name}")
        if np.any(omega <= 0.0) or not np.all(np.isfinite(omega)):
            raise FrameError("imputation weights must be positive and finite")
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            raise FrameError("design weights must be positive and finite")
        if not np.all((r == 0) | (r == 1)):
            raise FrameError("response indicator must be 0/1")
        resp = r == 1
        if np.any(np.isnan(eta[resp])):
            raise FrameError("eta undefined for a responding unit")
        if not np.all(np.isnan(eta[~resp])):
            raise FrameError("eta defined for a non-responding unit")
        ok = np.isnan(eta) | (eta == 0.0) | (eta == 1.0)
        if not np.all(ok):
            raise FrameError("eta must be 0/1 where defined")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "d", d)

    # -- sampled views of the parent columns -------------------------------
    @property
    def n(self) -> int:
        return self.members.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.parent.y[self.members]

    @property
    def z(self) -> np.ndarray:
        return self.parent.z[self.members]

    @property
    def u(self) -> np.ndarray:
        return self.parent.u[self.members]

    @property
    def v(self) -> np.ndarray:
        return self.parent.v[self.members]

    @property
    def stratum(self) -> np.ndarray:
        return self.parent.stratum[self.members]

    def y_observed(self) -> np.ndarray:
        """y with non-respondent entries zeroed (safe inside r-weighted sums)."""
        return np.where(self.r == 1, self.y, 0.0)

    def eta_filled(self) -> np.ndarray:
        """eta with undefined entries zeroed (safe inside r-weighted sums)."""
        return np.where(self.r == 1, np.nan_to_num(self.eta), 0.0)

    def eta_observed(self, k: int) -> float:
        """Zero indicator of sample position ``k``; raises if not observed."""
        if self.r[k] != 1:
            raise NotObservedError(f"eta of sample position {k} was not observed")
        return float(self.eta[k])

    def with_response(self, r: np.ndarray) -> "SampleFrame":
        """Copy of the frame with a new response vector and re-derived eta."""
        r = np.asarray(r, dtype=np.int64)
        eta = np.where(r == 1, (self.y != 0.0).astype(np.float64), np.nan)
        return replace(self, r=r, eta=eta)

    def with_weights(self, d: np.ndarray, omega: np.ndarray) -> "SampleFrame":
        """Copy with overridden design / imputation weights (bootstrap use)."""
        return replace(self, d=np.asarray(d, dtype=np.float64),
                       omega=np.asarray(omega, dtype=np.float64))

    @classmethod
    def from_members(cls, parent: PopulationFrame, members, pi, *,
                     omega=None, r=None, eta=None, d=None) -> "SampleFrame":
        members = np.asarray(members, dtype=np.int64)
        n = members.shape[0]
        if n and (members.min() < 0 or members.max() >= parent.n_units):
            raise FrameError("sample member index out of range")
        pi = np.asarray(pi, dtype=np.float64)
        if omega is None:
            omega = np.ones(n)
        if r is None:
            r = np.ones(n, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        if eta is None:
            yv = parent.y[members]
            eta = np.where(r == 1, (yv != 0.0).astype(np.float64), np.nan)
        return cls(parent=parent, members=members, pi=pi, omega=omega, r=r,
                   eta=eta, d=d)

    def to_json_bytes(self) -> bytes:
        payload = {
            "kind": "sample",
            "members": self.members,
            "pi": self.pi,
            "omega": self.omega,
            "r": self.r,
            "eta": self.eta,
            "d": self.d,
        }
        return _dump_frame(payload, parent=self.parent)

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "SampleFrame":
        d = _load_frame(blob, "sample")
        parent = PopulationFrame(y=d["parent"]["y"], z=d["parent"]["z"],
                                 u=d["parent"]["u"], v=d["parent"]["v"],
                                 stratum=d["parent"]["stratum"])
        return cls(parent=parent, members=d["members"], pi=d["pi"],
                   omega=d["omega"], r=d["r"], eta=d["eta"], d=d["d"])


def build_population(y, z, u, v, stratum=None, *, add_intercept_z=False,
                     add_intercept_u=False) -> PopulationFrame:
    """Validate raw columns into a :class:`PopulationFrame`.

    When intercept augmentation is requested the corresponding covariate
    block gets a leading constant-one column unless its first column already
    is one. The library never adds an intercept silently.
    """
    y = np.asarray(y, dtype=np.float64)
    z = _as_float_matrix(z, "z")
    u = _as_float_matrix(u, "u")
    if add_intercept_z and not np.all(z[:, 0] == 1.0):
        z = np.column_stack([np.ones(z.shape[0]), z])
    if add_intercept_u and not np.all(u[:, 0] == 1.0):
        u = np.column_stack([np.ones(u.shape[0]), u])
    if stratum is None:
        stratum = np.zeros(y.shape[0], dtype=np.int64)
    return PopulationFrame(y=y, z=z, u=u, v=np.asarray(v, dtype=np.float64),
                           stratum=np.asarray(stratum, dtype=np.int64))


def derive_eta(sample: SampleFrame) -> SampleFrame:
    """Set the observed zero indicator: eta_i = 1(y_i != 0) on respondents.

    The regression part of the mixture model is continuous, so an exact zero
    identifies the point mass; non-respondents stay undefined.
    """
    eta = np.where(sample.r == 1, (sample.y != 0.0).astype(np.float64), np.nan)
    return replace(sample, eta=eta)


@dataclass(frozen=True)
class RandomStream:
    """Cheap copyable token naming one reproducible stream of randomness.

    Identical ``(seed, stream_id)`` reproduce an identical draw sequence;
    distinct stream ids give statistically independent sequences. Substreams
    pack a child index into the id (20 bits per level), which is collision
    free for the shallow replicate/operation trees used here.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=(int(self.seed) & _MASK63,
                                             int(self.stream_id) & _MASK63))
        return np.random.default_rng(ss)

    def substream(self, k: int) -> "RandomStream":
        if not 0 <= k < (1 << 20):
            raise ValueError("substream index must be in [0, 2^20)")
        return RandomStream(self.seed, ((self.stream_id << 20) | k) & _MASK63)


def as_generator(stream) -> np.random.Generator:
    """Accept a RandomStream or a numpy Generator and return a Generator."""
    if isinstance(stream, RandomStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(stream)!r}")


# -- canonical JSON serialization (byte-stable round trips) -----------------

def _encode_array(arr: np.ndarray):
    return {
        "dtype": str(arr.dtype),
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
    }


def _decode_array(d):
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype=np.dtype(d["dtype"]))
    return arr.reshape(d["shape"]).copy()


def _dump_frame(payload, parent=None) -> bytes:
    doc = {}
    for k, val in payload.items():
        doc[k] = _encode_array(val) if isinstance(val, np.ndarray) else val
    if parent is not None:
        doc["parent"] = {k: _encode_array(getattr(parent, k))
                         for k in ("y", "z", "u", "v", "stratum")}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def _load_frame(blob: bytes, kind: str):
    doc = json.loads(blob.decode("ascii"))
    if doc.get("kind") != kind:
        raise FrameError(f"expected a serialized {kind} frame")
    out = {}
    for k, val in doc.items():
        if k == "kind":
            continue
        if k == "parent":
            out[k] = {kk: _decode_array(vv) for kk, vv in val.items()}
        elif isinstance(val, dict) and "dtype" in val:
            out[k] = _decode_array(val)
        else:
            out[k] = val
    return out
