"""Error-bounded fault models.

Errors are drawn in normalized units (|e| <= 1) and scaled by the configured
bound -- times |value| in relative mode -- so the compressor-style guarantee
|error| <= bound holds for every activation. The normal shape defaults to
sigma = bound/3 with rejection clipping at the bound; empirical shapes come
from histogram files and are sampled by piecewise-linear inverse CDF.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


class FaultError(Exception):
    pass


class FaultSpecError(FaultError):
    pass


class EmpiricalFileError(FaultError):
    pass


class UnknownCustomName(FaultError):
    pass


class NonFiniteValue(FaultError):
    pass


def mix64(*parts: int) -> int:
    """Combine integers into one 64-bit seed (splitmix64 finalizer per part)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h + (p & _MASK64)) & _MASK64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h


@dataclass(frozen=True)
class FaultSpec:
    """What to inject: error-bound mode, distribution shape, and bound."""

    mode: str                  # "absolute" | "relative"
    distribution: str          # "uniform" | "normal" | "empirical" | "custom"
    bound: float
    sigma_ratio: float = 1.0 / 3.0
    truncate: bool = True
    empirical_path: str = ""
    custom_name: str = ""
    seed_salt: int = 0

    def __post_init__(self):
        if self.mode not in ("absolute", "relative"):
            raise FaultSpecError(f"unknown mode {self.mode!r}")
        if self.distribution not in ("uniform", "normal", "empirical", "custom"):
            raise FaultSpecError(f"unknown distribution {self.distribution!r}")
        if not (self.bound > 0) or not math.isfinite(self.bound):
            raise FaultSpecError(f"bound must be a positive finite number, got {self.bound}")
        if self.distribution == "normal" and self.sigma_ratio <= 0:
            raise FaultSpecError("sigma_ratio must be positive")


@dataclass
class EmpiricalDistribution:
    """Histogram over normalized error units: rows of (edge_low, edge_high, mass)."""

    bins: tuple[tuple[float, float, float], ...]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        lows = np.array([b[0] for b in self.bins])
        highs = np.array([b[1] for b in self.bins])
        masses = np.array([b[2] for b in self.bins], dtype=float)
        total = masses.sum()
        if total <= 0:
            raise EmpiricalFileError("histogram has no mass")
        if not math.isclose(total, 1.0, rel_tol=1e-9):
            self.warnings.append(f"histogram mass {total:g} normalized to 1")
        self._lows = lows
        self._highs = highs
        self._cum = np.cumsum(masses / total)
        self._cum[-1] = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        idx = np.searchsorted(self._cum, u, side="right")
        idx = np.minimum(idx, len(self.bins) - 1)
        prev = np.where(idx > 0, self._cum[idx - 1], 0.0)
        frac = (u - prev) / (self._cum[idx] - prev)
        return self._lows[idx] + frac * (self._highs[idx] - self._lows[idx])


def load_empirical(path: str) -> EmpiricalDistribution:
    """Read a histogram file: one "edge_low edge_high mass" row per line."""
    bins = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise EmpiricalFileError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise EmpiricalFileError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            lo, hi, mass = (float(p) for p in parts)
        except ValueError as e:
            raise EmpiricalFileError(f"{path}:{lineno}: {e}") from e
        if not (lo < hi):
            raise EmpiricalFileError(f"{path}:{lineno}: edge_low must be below edge_high")
        if lo < -1.0 or hi > 1.0:
            raise EmpiricalFileError(
                f"{path}:{lineno}: support [{lo}, {hi}] outside normalized [-1, 1]")
        if mass < 0:
            raise EmpiricalFileError(f"{path}:{lineno}: negative mass")
        bins.append((lo, hi, mass))
    if not bins:
        raise EmpiricalFileError(f"{path}: no histogram rows")
    return EmpiricalDistribution(tuple(bins))


_CUSTOM_SAMPLERS: dict[str, object] = {}


def register_custom_sampler(name: str, draw) -> None:
    """Register `draw(rng, n) -> array of normalized errors` under a name.

    Draws are clamped into [-1, 1] so plugins cannot break the bound contract.
    """
    _CUSTOM_SAMPLERS[name] = draw


class Sampler:
    """Deterministic error stream for one (FaultSpec, seed) pair."""

    def __init__(self, spec: FaultSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self._rng = np.random.Generator(np.random.PCG64(seed & _MASK64))
        if spec.distribution == "empirical":
            self._empirical = load_empirical(spec.empirical_path)
        elif spec.distribution == "custom":
            if spec.custom_name not in _CUSTOM_SAMPLERS:
                raise UnknownCustomName(spec.custom_name)
            self._draw = _CUSTOM_SAMPLERS[spec.custom_name]

    def raw(self, n: int) -> np.ndarray:
        """n normalized draws; |e| <= 1 unless a normal with truncate=False."""
        spec = self.spec
        if spec.distribution == "uniform":
            return self._rng.uniform(-1.0, 1.0, n)
        if spec.distribution == "normal":
            out = self._rng.normal(0.0, spec.sigma_ratio, n)
            if spec.truncate:
                bad = np.abs(out) > 1.0
                while bad.any():
                    out[bad] = self._rng.normal(0.0, spec.sigma_ratio, int(bad.sum()))
                    bad = np.abs(out) > 1.0
            return out
        if spec.distribution == "empirical":
            return self._empirical.sample(self._rng, n)
        return np.clip(np.asarray(self._draw(self._rng, n), dtype=float), -1.0, 1.0)


def make_sampler(spec: FaultSpec, seed: int) -> Sampler:
    return Sampler(spec, seed)


def sample_error(sampler: Sampler, value: float) -> float:
    """One error for the given target value, honoring the spec's bound mode."""
    if not math.isfinite(value):
        raise NonFiniteValue(f"cannot perturb non-finite value {value!r}")
    raw = float(sampler.raw(1)[0])
    if sampler.spec.mode == "absolute":
        return raw * sampler.spec.bound
    return raw * sampler.spec.bound * abs(value)


def sample_errors(sampler: Sampler, value: float, n: int) -> np.ndarray:
    """Batch variant of sample_error with identical scaling."""
    if not math.isfinite(value):
        raise NonFiniteValue(f"cannot perturb non-finite value {value!r}")
    raw = sampler.raw(n)
    if sampler.spec.mode == "absolute":
        return raw * sampler.spec.bound
    return raw * sampler.spec.bound * abs(value)


def _wrap_int(v: int, bits: int) -> int:
    half = 1 << (bits - 1)
    return ((v + half) & ((1 << bits) - 1)) - half


def apply_fault(value, error: float, value_kind: str):
    """Perturb a value: float kinds add and re-round, int kinds round the
    error half-to-even and wrap at the type width."""
    if value_kind == "f64":
        return float(value) + error
    if value_kind == "f32":
        return struct.unpack("f", struct.pack("f", float(value) + error))[0]
    if value_kind in ("i32", "i64"):
        bits = 32 if value_kind == "i32" else 64
        delta = round(error)  # Python rounds halves to even
        return _wrap_int(int(value) + delta, bits)
    raise FaultError(f"cannot inject into value kind {value_kind!r}")


def _parse_bound(text: str) -> float:
    text = text.strip()
    try:
        if text.endswith("%"):
            return float(text[:-1]) / 100.0
        return float(text)
    except ValueError as e:
        raise FaultSpecError(f"bad bound {text!r}") from e


def parse_fault_type(text: str, base_dir: str = ".",
                     seed_salt: int = 0, truncate: bool = True) -> FaultSpec:
    """Parse a fault-type string like "uniform_rel(10%)" or
    "empirical_abs(hist.txt, 0.1)" into a FaultSpec."""
    import os

    text = text.strip()
    m = text.find("(")
    if m < 0 or not text.endswith(")"):
        raise FaultSpecError(f"expected name(args), got {text!r}")
    name = text[:m].strip()
    args = [a.strip() for a in text[m + 1:-1].split(",")] if text[m + 1:-1].strip() else []

    def expect_args(lo: int, hi: int):
        if not (lo <= len(args) <= hi):
            raise FaultSpecError(f"{name} takes {lo}..{hi} arguments, got {len(args)}")

    if name in ("uniform_abs", "uniform_rel"):
        expect_args(1, 1)
        mode = "absolute" if name.endswith("_abs") else "relative"
        return FaultSpec(mode, "uniform", _parse_bound(args[0]), seed_salt=seed_salt)
    if name in ("normal_abs", "normal_rel"):
        expect_args(1, 2)
        mode = "absolute" if name.endswith("_abs") else "relative"
        ratio = _parse_bound(args[1]) if len(args) == 2 else 1.0 / 3.0
        return FaultSpec(mode, "normal", _parse_bound(args[0]), sigma_ratio=ratio,
                         truncate=truncate, seed_salt=seed_salt)
    if name in ("empirical_abs", "empirical_rel"):
        expect_args(2, 2)
        mode = "absolute" if name.endswith("_abs") else "relative"
        path = args[0]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return FaultSpec(mode, "empirical", _parse_bound(args[1]),
                         empirical_path=path, seed_salt=seed_salt)
    if name == "custom":
        expect_args(2, 2)
        return FaultSpec("absolute", "custom", _parse_bound(args[1]),
                         custom_name=args[0], seed_salt=seed_salt)
    raise FaultSpecError(f"unknown fault type {name!r}")
