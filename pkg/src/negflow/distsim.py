"""Deterministic simulated multi-rank execution of the SSE exchange.

Ranks are plain loop iterations over an in-memory exchange table: no real
transport, bitwise reproducibility, and a ledger recording every simulated
message.  Byte accounting mirrors the closed-form volume models exactly:
transfers carry both the lesser and greater tensors (2 x 16-byte complex),
shifted or halo entries that fall off the grid travel as zero blocks rather
than being clipped, and rank-local copies are ledgered like any other
message, because the models count them too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .comm import InfeasiblePartitionError
from .device import NeighborMap
from .gf import GreensTensor, SelfEnergyTensor
from .params import EnergyGrid, SimParams
from .sse import CombinedD, SseVariant, pi_from_chains, preprocess_D, sse_pi_chains, sse_sigma

Array = np.ndarray

PAIR_BYTES = 32  # lesser + greater, 16-byte complex each

ELECTRON_G = "electron_G"
ELECTRON_SIGMA = "electron_Sigma"
PHONON_D = "phonon_D"
PHONON_PI = "phonon_Pi"


@dataclass(frozen=True)
class RankState:
    """Ownership of one simulated rank.

    The momentum-energy scheme owns flattened (k_z, E) points; the tiled
    scheme owns an energy-range/atom-range tile.  Across ranks the owned
    slices are pairwise disjoint and cover the full tensors.
    """

    rank: int
    points: tuple[tuple[int, int], ...] | None = None
    e_range: tuple[int, int] | None = None
    a_range: tuple[int, int] | None = None

    def point_mask(self, n_kz: int, n_e: int) -> Array:
        out = np.zeros((n_kz, n_e), dtype=bool)
        if self.points is not None:
            for k, i_e in self.points:
                out[k, i_e] = True
        elif self.e_range is not None:
            out[:, self.e_range[0] : self.e_range[1]] = True
        return out


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    src: int
    dst: int
    tag: str
    bytes: int


@dataclass
class MessageLedger:
    """Exact per-message byte record of one simulated run."""

    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, round_: int, src: int, dst: int, tag: str, nbytes: int) -> None:
        self.entries.append(LedgerEntry(round_, src, dst, tag, int(nbytes)))

    def bytes_sent(self, rank: int | None = None, tag: str | None = None) -> int:
        return sum(
            e.bytes
            for e in self.entries
            if (rank is None or e.src == rank) and (tag is None or e.tag == tag)
        )

    def bytes_received(self, rank: int | None = None, tag: str | None = None) -> int:
        return sum(
            e.bytes
            for e in self.entries
            if (rank is None or e.dst == rank) and (tag is None or e.tag == tag)
        )

    def total_bytes(self, tag: str | None = None) -> int:
        return sum(e.bytes for e in self.entries if tag is None or e.tag == tag)

    def tags(self) -> list[str]:
        return sorted({e.tag for e in self.entries})

    def rounds(self) -> list[int]:
        return sorted({e.round for e in self.entries})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["round", "src", "dst", "tag", "bytes"])
        for e in self.entries:
            writer.writerow([e.round, e.src, e.dst, e.tag, e.bytes])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "messages": len(self.entries),
            "total_bytes": self.total_bytes(),
            "by_tag": {tag: self.total_bytes(tag) for tag in self.tags()},
        }


def _chunks(total: int, parts: int) -> list[range]:
    """Contiguous ceil-division chunks (short or empty tails allowed)."""
    size = -(-total // parts)
    return [range(min(i * size, total), min((i + 1) * size, total)) for i in range(parts)]


def _flat_owner(chunks: list[range], index: int) -> int:
    for rank, chunk in enumerate(chunks):
        if index in chunk:
            return rank
    raise IndexError(f"index {index} outside every chunk")


class _PointLayout:
    """Momentum-energy ownership: flattened (k_z, E) split into P chunks."""

    def __init__(self, n_kz: int, n_e: int, processes: int):
        self.n_kz = n_kz
        self.n_e = n_e
        self.chunks = _chunks(n_kz * n_e, processes)

    def owner(self, k: int, i_e: int) -> int:
        return _flat_owner(self.chunks, k * self.n_e + i_e)

    def points(self, rank: int) -> list[tuple[int, int]]:
        return [divmod(flat, self.n_e) for flat in self.chunks[rank]]

    def mask(self, rank: int) -> Array:
        out = np.zeros((self.n_kz, self.n_e), dtype=bool)
        for k, i_e in self.points(rank):
            out[k, i_e] = True
        return out


class _PhononLayout:
    def __init__(self, n_qz: int, n_w: int, processes: int):
        self.n_w = n_w
        self.chunks = _chunks(n_qz * n_w, processes)

    def owner(self, q: int, w: int) -> int:
        return _flat_owner(self.chunks, q * self.n_w + w)


def _windowed(g: GreensTensor, needed: Array) -> GreensTensor:
    """Full-shape copy holding only the needed (k,E) rows, zeros elsewhere."""
    sel = needed[:, :, None, None, None]
    return GreensTensor(lesser=np.where(sel, g.lesser, 0), greater=np.where(sel, g.greater, 0))


def run_omen_scheme(
    g: GreensTensor,
    d: GreensTensor,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    params: SimParams,
    processes: int,
) -> tuple[SelfEnergyTensor, SelfEnergyTensor, MessageLedger]:
    """Momentum-energy decomposition with one exchange round per (q_z, omega).

    Each round broadcasts the preprocessed phonon slice to every rank, moves
    the two shifted electron blocks (E -+ offset, k -+ q) for every owned
    point, and reduces the partial phonon trace chains to the round's owner.
    Messages are simulated in ascending (round, src, dst) order.
    """
    if processes < 1:
        raise ValueError("process count must be >= 1")
    layout = _PointLayout(params.n_kz, params.n_E, processes)
    ph_layout = _PhononLayout(params.n_qz, params.n_w, processes)
    states = [RankState(rank=r, points=tuple(layout.points(r))) for r in range(processes)]
    dc = preprocess_D(d, nmap)
    ledger = MessageLedger()

    d_bytes = PAIR_BYTES * params.n_A * params.n_B * params.n_3D**2
    g_bytes = PAIR_BYTES * params.n_A * params.n_orb**2

    needed = [state.point_mask(params.n_kz, params.n_E) for state in states]
    for q in range(params.n_qz):
        for w in range(params.n_w):
            round_ = q * params.n_w + w
            off = grid.frequency_map[w][0]
            root = ph_layout.owner(q, w)
            for dst in range(processes):
                ledger.add(round_, root, dst, PHONON_D, d_bytes)
            for dst in range(processes):
                for k, i_e in states[dst].points:
                    for k_s, e_s in (
                        ((k - q) % params.n_kz, i_e - off),
                        ((k + q) % params.n_kz, i_e + off),
                    ):
                        if 0 <= e_s < params.n_E:
                            src = layout.owner(k_s, e_s)
                            needed[dst][k_s, e_s] = True
                        else:
                            src = dst  # off-grid shift travels as a zero block
                        ledger.add(round_, src, dst, ELECTRON_G, g_bytes)
            for src in range(processes):
                ledger.add(round_, src, root, PHONON_PI, d_bytes)

    sigma_l = np.zeros(params.electron_shape, np.complex128)
    sigma_g = np.zeros_like(sigma_l)
    chains_l = np.zeros((params.n_qz, params.n_w, params.n_A, params.n_B, 3, 3), np.complex128)
    chains_g = np.zeros_like(chains_l)
    for state in states:
        window = _windowed(g, needed[state.rank])
        owned = state.point_mask(params.n_kz, params.n_E)
        local = sse_sigma(SseVariant.REFERENCE, window, dc, dh, nmap, grid)
        sel = owned[:, :, None, None, None]
        sigma_l += np.where(sel, local.lesser, 0)
        sigma_g += np.where(sel, local.greater, 0)
        part_l, part_g = sse_pi_chains(window, dh, nmap, grid, params.n_qz, point_mask=owned)
        chains_l += part_l
        chains_g += part_g

    sigma = SelfEnergyTensor(lesser=sigma_l, greater=sigma_g)
    pi = pi_from_chains(chains_l, chains_g)
    return sigma, pi, ledger


def omen_model_bytes(params: SimParams, processes: int) -> dict[str, float]:
    """Closed-form per-rank byte expectations for the ledger comparison."""
    return {
        ELECTRON_G: 64 * (params.n_kz * params.n_E / processes) * params.n_qz * params.n_w
        * params.n_A * params.n_orb**2,
        PHONON_D: 32 * params.n_qz * params.n_w * params.n_A * params.n_B * params.n_3D**2,
        PHONON_PI: 32 * params.n_qz * params.n_w * params.n_A * params.n_B * params.n_3D**2,
    }


def tiled_model_bytes(params: SimParams, t_e: int, t_a: int) -> dict[str, float]:
    atoms = params.n_A / t_a + params.n_B
    g_half = 32 * params.n_kz * (params.n_E / t_e + 2 * params.n_w) * atoms * params.n_orb**2
    d_half = 32 * params.n_qz * params.n_w * atoms * params.n_B * params.n_3D**2
    return {ELECTRON_G: g_half, ELECTRON_SIGMA: g_half, PHONON_D: d_half, PHONON_PI: d_half}


def run_tiled_scheme(
    g: GreensTensor,
    d: GreensTensor,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    params: SimParams,
    t_e: int,
    t_a: int,
) -> tuple[SelfEnergyTensor, SelfEnergyTensor, MessageLedger]:
    """Energy-atom tiling with one all-to-all halo exchange.

    Rank (tE, tA) materializes the halo'd electron slice (energies extended
    by the largest frequency offset on both sides, atoms by half the
    neighbor count), computes its self-energy tile and partial phonon
    chains, then returns them over the mirrored footprint.  Round 0 is the
    forward exchange, round 1 the return.
    """
    if t_e < 1 or t_a < 1:
        raise ValueError("partition counts must be >= 1")
    if t_e > params.n_E or t_a > params.n_A:
        raise InfeasiblePartitionError(
            f"infeasible partition: T_E={t_e} > n_E or T_A={t_a} > n_A"
        )
    processes = t_e * t_a
    e_tiles = _chunks(params.n_E, t_e)
    a_tiles = _chunks(params.n_A, t_a)
    states = [
        RankState(
            rank=i_te * t_a + i_ta,
            e_range=(e_tiles[i_te].start, e_tiles[i_te].stop),
            a_range=(a_tiles[i_ta].start, a_tiles[i_ta].stop),
        )
        for i_te in range(t_e)
        for i_ta in range(t_a)
    ]
    halo_e = grid.max_offset
    halo_a = max(params.n_B // 2, nmap.max_reach)
    layout = _PointLayout(params.n_kz, params.n_E, processes)
    ph_layout = _PhononLayout(params.n_qz, params.n_w, processes)
    dc = preprocess_D(d, nmap)
    ledger = MessageLedger()

    col_atoms = len(a_tiles[0]) + 2 * halo_a  # unclipped model footprint
    g_col_bytes = PAIR_BYTES * col_atoms * params.n_orb**2
    d_slice_bytes = PAIR_BYTES * col_atoms * params.n_B * params.n_3D**2

    for state in states:
        rank = state.rank
        e_lo, e_hi = state.e_range
        for k in range(params.n_kz):
            for e_s in range(e_lo - halo_e, e_hi + halo_e):
                if 0 <= e_s < params.n_E:
                    src = layout.owner(k, e_s)
                else:
                    src = rank  # zero-padded halo mirrors the model rectangle
                ledger.add(0, src, rank, ELECTRON_G, g_col_bytes)
                ledger.add(1, rank, src, ELECTRON_SIGMA, g_col_bytes)
        for q in range(params.n_qz):
            for w in range(params.n_w):
                root = ph_layout.owner(q, w)
                ledger.add(0, root, rank, PHONON_D, d_slice_bytes)
                ledger.add(1, rank, root, PHONON_PI, d_slice_bytes)

    sigma_l = np.zeros(params.electron_shape, np.complex128)
    sigma_g = np.zeros_like(sigma_l)
    chains_l = np.zeros((params.n_qz, params.n_w, params.n_A, params.n_B, 3, 3), np.complex128)
    chains_g = np.zeros_like(chains_l)
    for state in states:
        e_lo, e_hi = state.e_range
        we_lo, we_hi = max(0, e_lo - halo_e), min(params.n_E, e_hi + halo_e)
        owned_e = state.point_mask(params.n_kz, params.n_E)
        a_lo, a_hi = state.a_range
        wa_lo, wa_hi = max(0, a_lo - halo_a), min(params.n_A, a_hi + halo_a)

        wg_l = np.zeros(params.electron_shape, np.complex128)
        wg_g = np.zeros_like(wg_l)
        wg_l[:, we_lo:we_hi, wa_lo:wa_hi] = g.lesser[:, we_lo:we_hi, wa_lo:wa_hi]
        wg_g[:, we_lo:we_hi, wa_lo:wa_hi] = g.greater[:, we_lo:we_hi, wa_lo:wa_hi]
        window = GreensTensor(lesser=wg_l, greater=wg_g)

        wdc_l = np.zeros_like(dc.lesser)
        wdc_g = np.zeros_like(dc.greater)
        wdc_l[:, :, wa_lo:wa_hi] = dc.lesser[:, :, wa_lo:wa_hi]
        wdc_g[:, :, wa_lo:wa_hi] = dc.greater[:, :, wa_lo:wa_hi]
        wdc = CombinedD(lesser=wdc_l, greater=wdc_g)

        local = sse_sigma(SseVariant.REFERENCE, window, wdc, dh, nmap, grid)
        sigma_l[:, e_lo:e_hi, a_lo:a_hi] += local.lesser[:, e_lo:e_hi, a_lo:a_hi]
        sigma_g[:, e_lo:e_hi, a_lo:a_hi] += local.greater[:, e_lo:e_hi, a_lo:a_hi]

        part_l, part_g = sse_pi_chains(
            window, dh, nmap, grid, params.n_qz,
            point_mask=owned_e, atom_range=(a_lo, a_hi),
        )
        chains_l += part_l
        chains_g += part_g

    sigma = SelfEnergyTensor(lesser=sigma_l, greater=sigma_g)
    pi = pi_from_chains(chains_l, chains_g)
    return sigma, pi, ledger


def compare_ledger_with_model(
    ledger: MessageLedger, params: SimParams, scheme: str, processes: int,
    t_e: int | None = None, t_a: int | None = None,
) -> list[dict]:
    """Per-tag, per-rank comparison of the ledger against the closed forms.

    The electron and phonon-D tags compare received bytes, the self-energy
    tags sent bytes, matching how the models attribute each term.
    """
    rows = []
    if scheme == "omen":
        model = omen_model_bytes(params, processes)
        directions = {ELECTRON_G: "received", PHONON_D: "received", PHONON_PI: "sent"}
    elif scheme == "tiled":
        model = tiled_model_bytes(params, t_e, t_a)
        directions = {
            ELECTRON_G: "received",
            ELECTRON_SIGMA: "sent",
            PHONON_D: "received",
            PHONON_PI: "sent",
        }
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    for tag, direction in directions.items():
        expected = model[tag]
        for rank in range(processes):
            got = ledger.bytes_received(rank, tag) if direction == "received" else ledger.bytes_sent(rank, tag)
            delta = abs(got - expected) / expected if expected else 0.0
            rows.append(
                {"tag": tag, "rank": rank, "direction": direction,
                 "ledger_bytes": got, "model_bytes": expected, "rel_delta": delta}
            )
    return rows
