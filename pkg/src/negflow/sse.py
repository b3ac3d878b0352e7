"""Electron-phonon scattering self-energy kernels, in equivalent variants.

The electron self-energy accumulates, for every point of the 8-D space
(k_z, E, q_z, omega, i, j, a, b),

    Sigma[k,E,a] += (G[k-q, E-off(w), f(a,b)] @ dH[a,b,i])
                    @ (dH[a,b,j] * Dc[q,w,a,b,i,j])

scaled by the imaginary prefactor and the frequency weight, where Dc is the
preprocessed four-term phonon combination.  The phonon self-energy reduces
trace chains of the same blocks over (k_z, E).  Five algorithmically
equivalent arrangements of the Sigma kernel trace the optimization chain
from the straightforward map to the batched, fused form; all of them share
a single boundary-handling helper, so they agree by construction on how
momentum wraps and how off-grid energy offsets drop out.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Iterable

import numpy as np

from .device import DeviceMatrices, NeighborMap
from .flops import FlopCounter
from .gf import GreensTensor, SelfEnergyTensor, gf_phase
from .params import EnergyGrid, SimParams, default_grid

Array = np.ndarray


class SseVariant(Enum):
    REFERENCE = "reference"
    FISSIONED = "fissioned"
    REDUNDANCY_REMOVED = "redundancy-removed"
    LAYOUT_TRANSFORMED = "layout-transformed"
    BATCHED_FUSED = "batched-fused"


class LayoutTag(Enum):
    GRID_MAJOR = "grid-major"  # [k_z, E, a, ...]
    ATOM_MAJOR = "atom-major"  # [a, k_z, E, ...]


def to_atom_major(arr: Array) -> Array:
    """[k, E, a, ...] -> [a, k, E, ...]; a lossless permutation."""
    return np.ascontiguousarray(np.moveaxis(arr, 2, 0))


def to_grid_major(arr: Array) -> Array:
    """[a, k, E, ...] -> [k, E, a, ...]; inverse of :func:`to_atom_major`."""
    return np.ascontiguousarray(np.moveaxis(arr, 0, 2))


def shifted_grid(arr: Array, q_shift: int, e_shift: int) -> Array:
    """Array indexed at ``[(k - q_shift) mod n_kz, E - e_shift, ...]``.

    The single boundary-handling site shared by every kernel and both use
    sites (E - omega for Sigma, E + omega for Pi via negated shifts):
    momentum wraps periodically, while entries whose shifted energy falls off
    the grid are zero, which is arithmetically identical to dropping those
    terms from the accumulation.
    """
    n_e = arr.shape[1]
    rolled = np.roll(arr, q_shift, axis=0)
    out = np.zeros_like(arr)
    if e_shift >= n_e or e_shift <= -n_e:
        return out
    if e_shift >= 0:
        out[:, e_shift:] = rolled[:, : n_e - e_shift]
    else:
        out[:, : n_e + e_shift] = rolled[:, -e_shift:]
    return out


@dataclass(frozen=True)
class CombinedD:
    """Preprocessed phonon input: per-(q,w,a,b,i,j) scalar combination."""

    lesser: Array
    greater: Array

    def __post_init__(self):
        if self.lesser.shape != self.greater.shape or self.lesser.ndim != 6:
            raise ValueError("combined phonon tensor must be a matching 6-D pair")


def preprocess_D(d: GreensTensor, nmap: NeighborMap) -> CombinedD:
    """Four-term combination D_ba - D_bb - D_aa + D_ab for b = f(a,s).

    Consumes the slot-layout phonon tensor; the reverse (b -> a) blocks are
    looked up through the neighbor map, which therefore must be
    reverse-closed (devices from :func:`negflow.device.synthesize` are).
    """
    if d.kind != "phonon":
        raise ValueError("preprocess_D expects a phonon tensor")
    n_a = nmap.n_A
    if d.lesser.shape[2] != n_a or d.lesser.shape[3] != nmap.n_B + 1:
        raise ValueError(
            f"missing neighbor slot: tensor has {d.lesser.shape[3] - 1} slots for {nmap.n_B} neighbors"
        )
    b = nmap.idx
    rev = nmap.reverse_slot_table()

    def combine(arr: Array) -> Array:
        d_ab = arr[:, :, :, 1:]
        d_aa = arr[:, :, :, :1]
        d_bb = arr[:, :, b, 0]
        d_ba = arr[:, :, b, 1 + rev]
        return d_ba - d_bb - d_aa + d_ab

    return CombinedD(lesser=combine(d.lesser), greater=combine(d.greater))


def _default_qws_order(n_qz: int, n_w: int, n_b: int) -> list[tuple[int, int, int]]:
    return list(product(range(n_qz), range(n_w), range(n_b)))


def _xi_block(dc_block: Array, dh_ab: Array, weight: float) -> Array:
    # Xi_i = weight * sum_j Dc[i,j] * dH_j; orb^2-class work, not tallied.
    return weight * np.einsum("ij,jMN->iMN", dc_block, dh_ab)


def sse_sigma_reference(
    g: GreensTensor,
    dc: CombinedD,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    counter: FlopCounter | None = None,
    qws_order: Iterable[tuple[int, int, int]] | None = None,
) -> SelfEnergyTensor:
    """Straightforward kernel: one conceptual map over the full 8-D space.

    Loops run over (q_z, omega, b) in ascending order (the documented
    deterministic reduction chunking) with the (k_z, E) sub-space batched;
    per point, the j-contraction is folded into one matrix per i before the
    two GEMMs.
    """
    n_kz, n_e, n_a, n_orb, _ = g.lesser.shape
    n_qz, n_w = dc.lesser.shape[:2]
    order = list(qws_order) if qws_order is not None else _default_qws_order(n_qz, n_w, nmap.n_B)
    out_l = np.zeros_like(g.lesser)
    out_g = np.zeros_like(g.greater)
    for q, w, s in order:
        off, weight = grid.frequency_map[w]
        for a in range(n_a):
            b = int(nmap.idx[a, s])
            dh_ab = dh[a, s]
            for g_arr, dc_arr, out in ((g.lesser, dc.lesser, out_l), (g.greater, dc.greater, out_g)):
                gs = shifted_grid(g_arr[:, :, b], q, off)
                dhg = np.einsum("keMP,iPN->keiMN", gs, dh_ab)
                xi = _xi_block(dc_arr[q, w, a, s], dh_ab, weight)
                out[:, :, a] += np.einsum("keiMP,iPN->keMN", dhg, xi)
                if counter is not None:
                    counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.dhg")
                    counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.accumulate")
    return SelfEnergyTensor(lesser=1j * out_l, greater=1j * out_g)


def _fissioned_stage1(
    g_arr: Array, dh: Array, nmap: NeighborMap, n_qz: int, n_w: int, counter: FlopCounter | None
) -> Array:
    """Map-fission transient: dHG with the (q,w) dimensions kept.

    The removed-later dimensions hold literally identical copies, since the
    momentum/frequency offsets are applied at the consumption site; that is
    exactly the redundancy the next transformation eliminates.
    """
    n_kz, n_e, _, n_orb, _ = g_arr.shape
    n_a, n_b = nmap.n_A, nmap.n_B
    dhg = np.empty((n_qz, n_w, n_a, n_b, n_kz, n_e, 3, n_orb, n_orb), dtype=np.complex128)
    for q in range(n_qz):
        for w in range(n_w):
            for a in range(n_a):
                for s in range(n_b):
                    b = int(nmap.idx[a, s])
                    dhg[q, w, a, s] = np.einsum("keMP,iPN->keiMN", g_arr[:, :, b], dh[a, s])
                    if counter is not None:
                        counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.dhg")
    return dhg


def _sigma_fissioned(g, dc, dh, nmap, grid, counter) -> SelfEnergyTensor:
    n_kz, n_e, n_a, n_orb, _ = g.lesser.shape
    n_qz, n_w = dc.lesser.shape[:2]
    outs = []
    for g_arr, dc_arr in ((g.lesser, dc.lesser), (g.greater, dc.greater)):
        # Map 1: dHG transient (with redundant q,w dims).  Map 2: dHD scalars.
        dhg = _fissioned_stage1(g_arr, dh, nmap, n_qz, n_w, counter)
        dhd = np.empty((n_qz, n_w, n_a, nmap.n_B, 3, 3, n_orb, n_orb), dtype=np.complex128)
        for q in range(n_qz):
            for w in range(n_w):
                weight = grid.frequency_map[w][1]
                for a in range(n_a):
                    for s in range(nmap.n_B):
                        dhd[q, w, a, s] = weight * np.einsum("ij,jMN->ijMN", dc_arr[q, w, a, s], dh[a, s])
        # Map 3: fold j, shift the transient, accumulate.
        out = np.zeros_like(g_arr)
        for q in range(n_qz):
            for w in range(n_w):
                off = grid.frequency_map[w][0]
                for a in range(n_a):
                    for s in range(nmap.n_B):
                        xi = dhd[q, w, a, s].sum(axis=1)
                        out[:, :, a] += np.einsum(
                            "keiMP,iPN->keMN", shifted_grid(dhg[q, w, a, s], q, off), xi
                        )
                        if counter is not None:
                            counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.accumulate")
        outs.append(1j * out)
    return SelfEnergyTensor(lesser=outs[0], greater=outs[1])


def _redundancy_removed_stage1(g_arr: Array, dh: Array, nmap: NeighborMap, counter, fused: bool) -> Array:
    """dHG without the (q,w) dimensions; optionally one fused GEMM per (a,b,i)."""
    n_kz, n_e, _, n_orb, _ = g_arr.shape
    n_a, n_b = nmap.n_A, nmap.n_B
    dhg = np.empty((n_a, n_b, n_kz, n_e, 3, n_orb, n_orb), dtype=np.complex128)
    for a in range(n_a):
        for s in range(n_b):
            b = int(nmap.idx[a, s])
            if fused:
                flat = g_arr[:, :, b].reshape(n_kz * n_e * n_orb, n_orb)
                for i in range(3):
                    dhg[a, s, :, :, i] = (flat @ dh[a, s, i]).reshape(n_kz, n_e, n_orb, n_orb)
                    if counter is not None:
                        counter.add_matmul(n_kz * n_e * n_orb, n_orb, n_orb, stage="sigma.dhg")
            else:
                dhg[a, s] = np.einsum("keMP,iPN->keiMN", g_arr[:, :, b], dh[a, s])
                if counter is not None:
                    counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.dhg")
    return dhg


def _sigma_redundancy_removed(g, dc, dh, nmap, grid, counter, fused_stage1: bool, atom_major: bool) -> SelfEnergyTensor:
    n_kz, n_e, n_a, n_orb, _ = g.lesser.shape
    n_qz, n_w = dc.lesser.shape[:2]
    outs = []
    for g_arr, dc_arr in ((g.lesser, dc.lesser), (g.greater, dc.greater)):
        src = to_grid_major(to_atom_major(g_arr)) if atom_major else g_arr
        dhg = _redundancy_removed_stage1(src, dh, nmap, counter, fused=fused_stage1)
        acc_shape = (n_a, n_kz, n_e, n_orb, n_orb) if atom_major else g_arr.shape
        out = np.zeros(acc_shape, dtype=np.complex128)
        for q in range(n_qz):
            for w in range(n_w):
                off, weight = grid.frequency_map[w]
                for a in range(n_a):
                    for s in range(nmap.n_B):
                        xi = _xi_block(dc_arr[q, w, a, s], dh[a, s], weight)
                        update = np.einsum("keiMP,iPN->keMN", shifted_grid(dhg[a, s], q, off), xi)
                        if atom_major:
                            out[a] += update
                        else:
                            out[:, :, a] += update
                        if counter is not None:
                            counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="sigma.accumulate")
        outs.append(1j * (to_grid_major(out) if atom_major else out))
    return SelfEnergyTensor(lesser=outs[0], greater=outs[1])


def _sigma_batched_fused(g, dc, dh, nmap, grid, counter) -> SelfEnergyTensor:
    """Final form: per-(a,b) transients, fused GEMMs for both stages.

    Stage 1 computes dHG once per (a,b) as a single (n_kz n_E n_orb)-tall
    GEMM; stage 2 realizes the omega-window accumulation as one
    n_orb x (n_w n_orb) x n_orb GEMM per (k_z, E, q_z, i), gathering the
    shifted dHG rows (zero rows stand in for off-grid energies).
    """
    n_kz, n_e, n_a, n_orb, _ = g.lesser.shape
    n_qz, n_w = dc.lesser.shape[:2]
    offsets = [grid.frequency_map[w][0] for w in range(n_w)]
    weights = [grid.frequency_map[w][1] for w in range(n_w)]
    out_l = np.zeros_like(g.lesser)
    out_g = np.zeros_like(g.greater)
    for a in range(n_a):
        for s in range(nmap.n_B):
            b = int(nmap.idx[a, s])
            dh_ab = dh[a, s]
            for g_arr, dc_arr, out in ((g.lesser, dc.lesser, out_l), (g.greater, dc.greater, out_g)):
                flat = g_arr[:, :, b].reshape(n_kz * n_e * n_orb, n_orb)
                dhg = np.empty((3, n_kz, n_e, n_orb, n_orb), dtype=np.complex128)
                for i in range(3):
                    dhg[i] = (flat @ dh_ab[i]).reshape(n_kz, n_e, n_orb, n_orb)
                    if counter is not None:
                        counter.add_matmul(n_kz * n_e * n_orb, n_orb, n_orb, stage="sigma.dhg")
                xi = np.stack(
                    [_xi_block(dc_arr[q, w, a, s], dh_ab, weights[w]) for q in range(n_qz) for w in range(n_w)]
                ).reshape(n_qz, n_w, 3, n_orb, n_orb)
                for q in range(n_qz):
                    for i in range(3):
                        window = np.concatenate(
                            [shifted_grid(dhg[i], q, offsets[w]) for w in range(n_w)], axis=-1
                        )
                        stacked_xi = xi[q, :, i].reshape(n_w * n_orb, n_orb)
                        out[:, :, a] += window @ stacked_xi
                        if counter is not None:
                            counter.add_matmul(n_orb, n_w * n_orb, n_orb, repeat=n_kz * n_e, stage="sigma.accumulate")
    return SelfEnergyTensor(lesser=1j * out_l, greater=1j * out_g)


def sse_sigma(
    variant: SseVariant,
    g: GreensTensor,
    dc: CombinedD,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    counter: FlopCounter | None = None,
) -> SelfEnergyTensor:
    """Electron self-energy in the requested kernel arrangement."""
    if g.kind != "electron":
        raise ValueError("sse_sigma expects an electron tensor")
    if dc.lesser.shape[2:4] != (nmap.n_A, nmap.n_B):
        raise ValueError("combined phonon tensor does not match the neighbor map")
    if variant is SseVariant.REFERENCE:
        return sse_sigma_reference(g, dc, dh, nmap, grid, counter=counter)
    if variant is SseVariant.FISSIONED:
        return _sigma_fissioned(g, dc, dh, nmap, grid, counter)
    if variant is SseVariant.REDUNDANCY_REMOVED:
        return _sigma_redundancy_removed(g, dc, dh, nmap, grid, counter, fused_stage1=False, atom_major=False)
    if variant is SseVariant.LAYOUT_TRANSFORMED:
        return _sigma_redundancy_removed(g, dc, dh, nmap, grid, counter, fused_stage1=True, atom_major=True)
    if variant is SseVariant.BATCHED_FUSED:
        return _sigma_batched_fused(g, dc, dh, nmap, grid, counter)
    raise ValueError(f"unknown variant {variant!r}")


def sse_pi_chains(
    g: GreensTensor,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    n_qz: int,
    counter: FlopCounter | None = None,
    hoist_invariant: bool = True,
    point_mask: Array | None = None,
    atom_range: tuple[int, int] | None = None,
) -> tuple[Array, Array]:
    """Per-(q,w,a,b,i,j) trace chains of the phonon self-energy, before signs.

    chain[q,w,a,s,i,j] = w_E * sum_{k,E} tr( dH_i G^{><}[k+q, E+off, a]
    dH_j G^{<>}[k,E,b] ); the first factor of the greater chain comes from
    the greater tensor and the trailing one from the lesser tensor, and vice
    versa.  ``point_mask`` restricts the (k,E) reduction and ``atom_range``
    the produced atoms (both used by the distributed schemes).  With
    ``hoist_invariant`` the momentum/frequency-independent dH_j G factor is
    computed once per (a,b) instead of once per point, which is the
    arrangement the reduced flop model describes.
    """
    n_kz, n_e, n_a, n_orb, _ = g.lesser.shape
    n_w = grid.n_w
    w_e = grid.energy_weight
    a_lo, a_hi = atom_range if atom_range is not None else (0, n_a)
    chains_l = np.zeros((n_qz, n_w, n_a, nmap.n_B, 3, 3), dtype=np.complex128)
    chains_g = np.zeros_like(chains_l)
    mask = None
    if point_mask is not None:
        mask = np.asarray(point_mask, dtype=bool)
        if mask.shape != (n_kz, n_e):
            raise ValueError(f"point mask must have shape ({n_kz}, {n_e})")
    for a in range(a_lo, a_hi):
        for s in range(nmap.n_B):
            b = int(nmap.idx[a, s])
            dh_ab = dh[a, s]
            for g1_arr, g2_arr, chains in ((g.greater, g.lesser, chains_g), (g.lesser, g.greater, chains_l)):
                g2 = g2_arr[:, :, b]
                if mask is not None:
                    g2 = g2 * mask[:, :, None, None]
                m2 = None
                if hoist_invariant:
                    m2 = np.einsum("jPQ,keQM->kejPM", dh_ab, g2)
                    if counter is not None:
                        counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="pi.m2")
                for q in range(n_qz):
                    for w in range(n_w):
                        off = grid.frequency_map[w][0]
                        g1s = shifted_grid(g1_arr[:, :, a], -q, -off)
                        m1 = np.einsum("iPQ,keQM->keiPM", dh_ab, g1s)
                        if counter is not None:
                            counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="pi.m1")
                        if not hoist_invariant:
                            m2 = np.einsum("jPQ,keQM->kejPM", dh_ab, g2)
                            if counter is not None:
                                counter.add_matmul(n_orb, n_orb, n_orb, repeat=n_kz * n_e * 3, stage="pi.m2")
                        chains[q, w, a, s] = w_e * np.einsum("keiPM,kejMP->ij", m1, m2)
    return chains_l, chains_g


def pi_from_chains(chains_lesser: Array, chains_greater: Array) -> SelfEnergyTensor:
    """Assemble the slot-layout phonon self-energy from trace chains.

    The diagonal (self) slot carries -i times the neighbor sum; each
    neighbor slot carries +i times its own chain.
    """
    n_qz, n_w, n_a, n_b = chains_lesser.shape[:4]
    out_shape = (n_qz, n_w, n_a, n_b + 1, 3, 3)
    out_l = np.empty(out_shape, dtype=np.complex128)
    out_g = np.empty(out_shape, dtype=np.complex128)
    for chains, out in ((chains_lesser, out_l), (chains_greater, out_g)):
        out[:, :, :, 0] = -1j * chains.sum(axis=3)
        out[:, :, :, 1:] = 1j * chains
    return SelfEnergyTensor(lesser=out_l, greater=out_g)


def sse_pi(
    g: GreensTensor,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    n_qz: int,
    counter: FlopCounter | None = None,
    hoist_invariant: bool = True,
    point_mask: Array | None = None,
    atom_range: tuple[int, int] | None = None,
) -> SelfEnergyTensor:
    """Phonon self-energy: diagonal slot per the -i trace sum, neighbor slots per +i."""
    if g.kind != "electron":
        raise ValueError("sse_pi expects the electron Green's tensor")
    chains_l, chains_g = sse_pi_chains(
        g, dh, nmap, grid, n_qz,
        counter=counter, hoist_invariant=hoist_invariant,
        point_mask=point_mask, atom_range=atom_range,
    )
    return pi_from_chains(chains_l, chains_g)


def count_sse_phase(
    g: GreensTensor,
    dc: CombinedD,
    dh: Array,
    nmap: NeighborMap,
    grid: EnergyGrid,
    n_qz: int,
    variant: SseVariant = SseVariant.REFERENCE,
) -> FlopCounter:
    """Run one full SSE evaluation (Sigma + Pi) with an attached GEMM counter.

    The reference and fissioned arrangements pair with the unhoisted Pi
    kernel (full recomputation, the straightforward-algorithm flop model);
    the redundancy-free arrangements pair with the hoisted one (the reduced
    model).
    """
    counter = FlopCounter()
    hoist = variant not in (SseVariant.REFERENCE, SseVariant.FISSIONED)
    sse_sigma(variant, g, dc, dh, nmap, grid, counter=counter)
    sse_pi(g, dh, nmap, grid, n_qz, counter=counter, hoist_invariant=hoist)
    return counter


@dataclass
class LoopResult:
    """Outcome of the self-consistent GF/SSE iteration."""

    g_electron: GreensTensor
    g_phonon: GreensTensor
    sigma: SelfEnergyTensor
    pi: SelfEnergyTensor
    iterations: int
    converged: bool
    deltas: list[float]
    abs_deltas: list[float]


def _gf_change(old: GreensTensor, new: GreensTensor) -> tuple[float, float]:
    """(absolute, relative) max change of the lesser/greater pair."""
    scale = max(float(np.max(np.abs(old.lesser))), float(np.max(np.abs(old.greater))), 1e-300)
    diff = max(
        float(np.max(np.abs(new.lesser - old.lesser))),
        float(np.max(np.abs(new.greater - old.greater))),
    )
    return diff, diff / scale


def seeded_self_energies(params: SimParams, scale: float) -> tuple[SelfEnergyTensor, SelfEnergyTensor]:
    """Deterministic nonzero starting self-energies.

    The plain algorithm starts from zero, whose fixed point under the
    absorbing boundary is the all-zero lesser/greater sector; seeding the
    diagonal with +-i*scale produces a relaxation trajectory worth logging.
    """
    sigma = SelfEnergyTensor.zeros_electron(params)
    pi = SelfEnergyTensor.zeros_phonon(params)
    eye_orb = np.eye(params.n_orb)
    sigma.lesser[:] = 1j * scale * eye_orb
    sigma.greater[:] = -1j * scale * eye_orb
    pi.lesser[:, :, :, 0] = 1j * scale * np.eye(params.n_3D)
    pi.greater[:, :, :, 0] = -1j * scale * np.eye(params.n_3D)
    return sigma, pi


def self_consistent_loop(
    dev: DeviceMatrices,
    nmap: NeighborMap,
    params: SimParams,
    grid: EnergyGrid | None = None,
    max_iter: int = 20,
    tol: float = 1e-8,
    variant: SseVariant = SseVariant.REFERENCE,
    solver: str = "dense",
    threads: int = 1,
    initial_sigma: SelfEnergyTensor | None = None,
    initial_pi: SelfEnergyTensor | None = None,
) -> LoopResult:
    """Alternate GF and SSE phases until the electron GF stops moving.

    Starts from zero self-energies unless seeds are given; stops once the
    max relative change of G^<> between consecutive GF passes is within
    ``tol``, or after ``max_iter`` iterations (reported as non-converged,
    distinct from solver failures which raise).  The retarded inputs of
    every GF pass are derived from the lesser/greater pair.
    """
    grid = grid if grid is not None else default_grid(params)
    sigma = initial_sigma if initial_sigma is not None else SelfEnergyTensor.zeros_electron(params)
    pi = initial_pi if initial_pi is not None else SelfEnergyTensor.zeros_phonon(params)
    g_e = g_ph = None
    prev: GreensTensor | None = None
    deltas: list[float] = []
    abs_deltas: list[float] = []
    for iteration in range(1, max_iter + 1):
        g_e, g_ph = gf_phase(dev, sigma, pi, params, grid, nmap, solver=solver, threads=threads)
        if prev is not None:
            diff, delta = _gf_change(prev, g_e)
            deltas.append(delta)
            abs_deltas.append(diff)
            if delta <= tol:
                return LoopResult(g_e, g_ph, sigma, pi, iteration, True, deltas, abs_deltas)
        prev = g_e
        dc = preprocess_D(g_ph, nmap)
        sigma = sse_sigma(SseVariant(variant), g_e, dc, dev.dH, nmap, grid)
        pi = sse_pi(g_e, dev.dH, nmap, grid, params.n_qz)
    return LoopResult(g_e, g_ph, sigma, pi, max_iter, False, deltas, abs_deltas)
