"""Image transmission over WiFi / 5G / LiFi links.

Each link carries bits with 4-ary orthogonal FSK and noncoherent envelope
detection through an AWGN channel. The signal is modelled at the correlator
output: every symbol yields four complex branch values, the transmitted
branch holding ``sqrt(Es)`` and all branches receiving complex Gaussian
noise of variance ``N0``.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

M_ARY = 4
BITS_PER_SYMBOL = 2


class Tech(str, enum.Enum):
    WIFI = "WiFi"
    FIVEG = "5G"
    LIFI = "LiFi"


@dataclass(frozen=True)
class TechnologyProfile:
    tech: Tech
    throughput_bps: float
    nominal_snr_db: float
    label: str = ""

    def __post_init__(self):
        if not self.throughput_bps > 0:
            raise InvalidInputError(f"{self.tech.value}: throughput must be positive, got {self.throughput_bps}")
        if not math.isfinite(self.nominal_snr_db):
            raise InvalidInputError(f"{self.tech.value}: SNR must be finite")
        if not self.label:
            object.__setattr__(self, "label", self.tech.value)

    def to_dict(self) -> dict:
        return {
            "tech": self.tech.value,
            "throughput_bps": self.throughput_bps,
            "nominal_snr_db": self.nominal_snr_db,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TechnologyProfile":
        return cls(Tech(d["tech"]), float(d["throughput_bps"]), float(d["nominal_snr_db"]), d.get("label", ""))


# Average throughputs from the experimental setup; SNRs are chosen so the
# nominal links are essentially error free (BER < 1e-6).
DEFAULT_PROFILES = (
    TechnologyProfile(Tech.WIFI, 800e6, 15.0),
    TechnologyProfile(Tech.FIVEG, 400e6, 14.0),
    TechnologyProfile(Tech.LIFI, 200e6, 16.0),
)


def default_profiles() -> list[TechnologyProfile]:
    return list(DEFAULT_PROFILES)


@dataclass(frozen=True, eq=False)
class BitStream:
    bits: np.ndarray
    origin: str = ""

    def __len__(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitStream):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class SymbolBlock:
    symbols: np.ndarray
    samples: np.ndarray | None
    pad_bits: int = 0
    amplitude: float = 1.0
    origin: str = ""


@dataclass(frozen=True)
class ChannelOutcome:
    tech: Tech
    received_bits: BitStream = field(repr=False)
    ber: float
    snr_db: float
    latency_s: float
    seed: int
    n_bits: int
    throughput_bps: float

    def to_record(self, image_id: str, **extra) -> dict:
        rec = {
            "tech": self.tech.value,
            "snr_db": self.snr_db,
            "ber": self.ber,
            "latency_s": self.latency_s,
            "seed": self.seed,
            "image_id": image_id,
        }
        rec.update(extra)
        return rec


def serialize_image(image: np.ndarray, origin: str = "") -> BitStream:
    """Flatten an ``(height, width, 3)`` uint8 raster into a bit stream, MSB first."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected an RGB raster of shape (h, w, 3), got {image.shape}")
    if image.shape[0] * image.shape[1] == 0:
        raise InvalidInputError("image has zero pixels")
    if image.dtype != np.uint8:
        raise InvalidInputError(f"expected 8-bit channels, got dtype {image.dtype}")
    return BitStream(np.unpackbits(image.reshape(-1)), origin)


def deserialize_image(stream: BitStream, height: int, width: int) -> np.ndarray:
    if len(stream) != height * width * 24:
        raise InvalidInputError(f"{len(stream)} bits cannot fill a {height}x{width} RGB image")
    return np.packbits(stream.bits).reshape(height, width, 3)


def qfsk_modulate(stream: BitStream, es: float = 1.0) -> SymbolBlock:
    bits = np.asarray(stream.bits, dtype=np.uint8)
    if bits.size == 0:
        raise InvalidInputError("cannot modulate an empty bit stream")
    pad = bits.size % BITS_PER_SYMBOL
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    pairs = bits.reshape(-1, BITS_PER_SYMBOL)
    symbols = (pairs[:, 0].astype(np.int64) << 1) | pairs[:, 1]
    amp = math.sqrt(es)
    samples = np.zeros((symbols.size, M_ARY), dtype=np.complex128)
    samples[np.arange(symbols.size), symbols] = amp
    return SymbolBlock(symbols, samples, pad, amp, stream.origin)


def awgn_apply(block: SymbolBlock, snr_db: float, seed: int) -> SymbolBlock:
    """Add complex AWGN of variance N0 per branch, with Es/N0 = 10^(snr_db/10)."""
    if block.samples is None:
        raise InvalidInputError("block has no correlator samples")
    if not math.isfinite(snr_db):
        raise InvalidInputError(f"SNR must be finite, got {snr_db}")
    es = block.amplitude**2
    n0 = es / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(n0 / 2.0)
    shape = block.samples.shape
    noise = sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return SymbolBlock(block.symbols, block.samples + noise, block.pad_bits, block.amplitude, block.origin)


def detect_symbols(samples: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(np.abs(samples), axis=1)


def qfsk_demodulate(block: SymbolBlock) -> BitStream:
    if block.samples is None or block.samples.size == 0:
        raise InvalidInputError("block has no correlator samples")
    samples = np.asarray(block.samples)
    if samples.ndim != 2 or samples.shape[1] != M_ARY:
        raise InvalidInputError(f"correlator samples must have shape (n, {M_ARY}), got {samples.shape}")
    sym = detect_symbols(samples)
    bits = np.empty(sym.size * BITS_PER_SYMBOL, dtype=np.uint8)
    bits[0::2] = (sym >> 1) & 1
    bits[1::2] = sym & 1
    if block.pad_bits:
        bits = bits[: bits.size - block.pad_bits]
    return BitStream(bits, block.origin)


def theoretical_ser(snr_db: float) -> float:
    """Symbol error probability of noncoherent orthogonal 4-FSK."""
    g = 10.0 ** (snr_db / 10.0)
    return sum(
        (-1) ** (k + 1) * math.comb(M_ARY - 1, k) / (k + 1) * math.exp(-k / (k + 1) * g)
        for k in range(1, M_ARY)
    )


def theoretical_ber(snr_db: float) -> float:
    return theoretical_ser(snr_db) * (M_ARY / 2) / (M_ARY - 1)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary identifiers (independent of PYTHONHASHSEED)."""
    key = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def transmit_bits(stream: BitStream, profile: TechnologyProfile, snr_db: float, seed: int) -> ChannelOutcome:
    block = awgn_apply(qfsk_modulate(stream), snr_db, seed)
    received = qfsk_demodulate(block)
    n = len(stream)
    errors = int(np.count_nonzero(received.bits != stream.bits))
    return ChannelOutcome(
        tech=profile.tech,
        received_bits=received,
        ber=errors / n,
        snr_db=float(snr_db),
        latency_s=n / profile.throughput_bps,
        seed=int(seed),
        n_bits=n,
        throughput_bps=profile.throughput_bps,
    )


def transmit(image: np.ndarray, profile: TechnologyProfile, snr_db: float | None = None,
             seed: int = 0, origin: str = "") -> ChannelOutcome:
    """Send a whole image over one link. ``snr_db`` defaults to the profile's nominal SNR."""
    if snr_db is None:
        snr_db = profile.nominal_snr_db
    return transmit_bits(serialize_image(image, origin), profile, snr_db, seed)


def stripe_rows(height: int, weights: Sequence[float]) -> list[tuple[int, int]]:
    """Split ``height`` rows into contiguous stripes proportional to ``weights``.

    Every stripe gets at least one row; the largest-remainder rule assigns the rest.
    """
    k = len(weights)
    if height < k:
        raise InvalidInputError(f"image needs at least {k} rows to stripe over {k} links, got {height}")
    total = float(sum(weights))
    spare = height - k
    raw = [spare * w / total for w in weights]
    counts = [1 + int(math.floor(r)) for r in raw]
    leftover = height - sum(counts)
    order = sorted(range(k), key=lambda i: (-(raw[i] - math.floor(raw[i])), i))
    for i in order[:leftover]:
        counts[i] += 1
    bounds, start = [], 0
    for c in counts:
        bounds.append((start, start + c))
        start += c
    return bounds


def transmit_mats(image: np.ndarray, profiles: Sequence[TechnologyProfile], seed: int,
                  nominal: Sequence[TechnologyProfile] | None = None, origin: str = ""):
    """Aggregate transmission over several links at once.

    Rows are striped across links in proportion to the *nominal* throughputs
    (the scheduler does not know about degradations); each stripe then
    travels over its link using the possibly perturbed ``profiles``. Returns
    the per-link outcomes and the reassembled received image.
    """
    image = np.asarray(image)
    nominal = list(nominal) if nominal is not None else list(profiles)
    bounds = stripe_rows(image.shape[0], [p.throughput_bps for p in nominal])
    received = np.empty_like(image)
    outcomes = []
    for idx, (profile, (lo, hi)) in enumerate(zip(profiles, bounds)):
        stripe = image[lo:hi]
        out = transmit(stripe, profile, profile.nominal_snr_db, derive_seed(seed, idx), origin)
        received[lo:hi] = deserialize_image(out.received_bits, hi - lo, image.shape[1])
        outcomes.append(out)
    return outcomes, received
