"""Block-sparse normal equations ``A z = b`` in the Fourier/subspace domain.

Unknowns are the unitary 2D-DFTs of the ``l_sub`` coefficient maps, stacked
band after band (``z[j * p_m + k]`` = frequency ``k`` of map ``j``).

``A = w_m A_m + w_h A_h + mu A_r`` with ``w = 1 / sigma^2``:

* ``A_m`` -- ``l_sub x l_sub`` grid of diagonal blocks,
  ``[A_m]_ij = sum_l conj(alpha_li) * alpha_lj`` with
  ``alpha_lj = sum_b L_m[l, b] V[b, j] M_b``.
* ``A_h`` -- each block couples only fine frequencies that alias onto the
  same coarse frequency; stored as ``(d^2, d^2, p_h)`` diagonals,
  ``[A_h]_ij[q, s] = d^-2 sum_l L_h[l]^2 V[l, i] V[l, j] conj(H_l[q]) H_l[s]``.
* ``A_r`` -- ``|D_h|^2 + |D_v|^2`` repeated on every coefficient map.

``J(z) = 1/2 z^H A z - Re(b^H z) + c`` is the frequency-domain objective
with data terms ``1/(2 sigma^2) ||y - G z||^2`` and regularizer
``mu/2 ||z D||^2``; its gradient is ``A z - b``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .datacube import FREQUENCY, GridShape, SpectralCube, write_container
from .errors import ArgumentError
from .operators import DecimationSpec, SpectralResponse, diff_energy_transfer, from_blocks, to_blocks
from .psf import TransferStack
from .subspace import SubspaceBasis

SYSTEM_MAGIC = b"FUSESYS\0"
DENSE_GUARD = 4096
BAND_CHUNK = 256

# how many times each builder ran; read by the pipeline and the reuse tests
CALLS = Counter()


@dataclass(frozen=True, eq=False)
class MsBlockMatrix:
    blocks: np.ndarray  # (l_sub, l_sub, p_m)
    shape: GridShape
    ops: int = 0

    @property
    def l_sub(self) -> int:
        return self.blocks.shape[0]


@dataclass(frozen=True, eq=False)
class HsBlockMatrix:
    blocks: np.ndarray  # (l_sub, l_sub, d^2, d^2, p_h)
    shape: GridShape
    d: int
    ops: int = 0

    @property
    def l_sub(self) -> int:
        return self.blocks.shape[0]

    @property
    def packed(self) -> np.ndarray:
        """``(l_sub*d^2, l_sub*d^2, p_h)`` view with rows (i, q) and columns (j, s)."""
        n, _, q, _, k = self.blocks.shape
        return np.ascontiguousarray(self.blocks.transpose(0, 2, 1, 3, 4)).reshape(n * q, n * q, k)

    def nnz(self) -> int:
        return int(np.count_nonzero(self.blocks))


@dataclass(frozen=True, eq=False)
class RegDiagonal:
    diagonal: np.ndarray  # (p_m,) real
    l_sub: int
    shape: GridShape


# --------------------------------------------------------------------------
# builders


def _check_dims(lresp: SpectralResponse, V: SubspaceBasis, T: TransferStack):
    if lresp.l_in != V.l_h:
        raise ArgumentError(f"response expects {lresp.l_in} bands, basis has {V.l_h}")
    if len(T) != V.l_h:
        raise ArgumentError(f"{len(T)} transfer functions for {V.l_h} bands")


def build_Am(lm: SpectralResponse, basis: SubspaceBasis, M: TransferStack, chunk: int = BAND_CHUNK) -> MsBlockMatrix:
    """MS Gram blocks, upper triangle computed, lower reflected."""
    _check_dims(lm, basis, M)
    CALLS["Am"] += 1
    V = basis.V
    n, p, l_m, l_h = basis.l_sub, M.shape.pixels, lm.l_out, basis.l_h
    # alpha[l, j, :] = sum_b L_m[l, b] V[b, j] M_b, accumulated over band chunks
    alpha = np.zeros((l_m * n, p), dtype=np.complex128)
    for start in range(0, l_h, chunk):
        sl = slice(start, min(start + chunk, l_h))
        W = (lm.matrix[:, sl, None] * V[None, sl, :]).transpose(0, 2, 1).reshape(l_m * n, -1)
        alpha += W @ M.transfer[sl]
    alpha = alpha.reshape(l_m, n, p)
    blocks = np.empty((n, n, p), dtype=np.complex128)
    ca = np.conj(alpha)
    for i in range(n):
        blocks[i, i] = np.sum((ca[:, i] * alpha[:, i]).real, axis=0)
        for j in range(i + 1, n):
            blocks[i, j] = np.sum(ca[:, i] * alpha[:, j], axis=0)
            blocks[j, i] = np.conj(blocks[i, j])
    ops = l_m * n * l_h * p + (n * (n + 1) // 2) * l_m * p
    return MsBlockMatrix(blocks, M.shape, ops)


def build_Ah(
    lh: SpectralResponse,
    basis: SubspaceBasis,
    H: TransferStack,
    spec: DecimationSpec,
    chunk: int = BAND_CHUNK,
) -> HsBlockMatrix:
    """HS Gram blocks restricted to the aliasing pattern.

    Only pairs ``i <= j`` and block positions ``q <= s`` are accumulated;
    the rest follows from ``[A_h]_ji = [A_h]_ij`` and
    ``[A_h]_ij[s, q] = conj([A_h]_ij[q, s])``.
    """
    _check_dims(lh, basis, H)
    CALLS["Ah"] += 1
    d = spec.d
    coarse = spec.coarse(H.shape)
    n, l_h, ph, d2 = basis.l_sub, basis.l_h, coarse.pixels, d * d
    V = basis.V
    w = lh.diagonal**2 / d2
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    qs = [(q, s) for q in range(d2) for s in range(q, d2)]
    acc = np.zeros((len(pairs), len(qs), ph), dtype=np.complex128)
    for start in range(0, l_h, chunk):
        sl = slice(start, min(start + chunk, l_h))
        Hb = to_blocks(H.images[sl], d)  # (chunk, d2, ph)
        Hc = np.conj(Hb)
        C = np.stack([w[sl] * V[sl, i] * V[sl, j] for i, j in pairs], axis=0)  # (npairs, chunk)
        for t, (q, s) in enumerate(qs):
            acc[:, t] += C @ (Hc[:, q] * Hb[:, s])
    blocks = np.empty((n, n, d2, d2, ph), dtype=np.complex128)
    for u, (i, j) in enumerate(pairs):
        for t, (q, s) in enumerate(qs):
            blocks[i, j, q, s] = acc[u, t]
            if q != s:
                blocks[i, j, s, q] = np.conj(acc[u, t])
            else:
                blocks[i, j, q, q] = acc[u, t].real
        if i != j:
            blocks[j, i] = blocks[i, j]
    ops = len(pairs) * len(qs) * l_h * ph
    return HsBlockMatrix(blocks, H.shape, d, ops)


def build_Ar(shape: GridShape, l_sub: int) -> RegDiagonal:
    CALLS["Ar"] += 1
    return RegDiagonal(diff_energy_transfer(shape).energy, int(l_sub), shape)


def _weight(sigma) -> float:
    sigma = float(sigma)
    if sigma <= 0:
        raise ArgumentError("noise levels must be > 0")
    return 0.0 if np.isinf(sigma) else 1.0 / sigma**2


def build_b_parts(ymF, yhF, lm, lh, basis, M, H, spec, chunk: int = BAND_CHUNK):
    """Unweighted MS and HS contributions to ``b``, each ``(l_sub, p_m)``.

    Either observation may be ``None`` (its part is then zero).
    """
    CALLS["b"] += 1
    V = basis.V
    n, shape = basis.l_sub, M.shape
    p = shape.pixels
    bm = np.zeros((n, p), dtype=np.complex128)
    bh = np.zeros((n, p), dtype=np.complex128)
    if ymF is not None:
        if ymF.shape != shape or ymF.bands != lm.l_out or ymF.domain != FREQUENCY:
            raise ArgumentError("MS observation does not match models/grid")
        for start in range(0, basis.l_h, chunk):
            sl = slice(start, min(start + chunk, basis.l_h))
            back = np.conj(M.transfer[sl]) * (lm.matrix[:, sl].T @ ymF.data)
            bm += V[sl].T @ back
    if yhF is not None:
        d = spec.d
        coarse = spec.coarse(shape)
        if yhF.shape != coarse or yhF.bands != basis.l_h or yhF.domain != FREQUENCY:
            raise ArgumentError("HS observation does not match models/grid")
        acc = np.zeros((n, d * d, coarse.pixels), dtype=np.complex128)
        VL = V * lh.diagonal[:, None]
        for start in range(0, basis.l_h, chunk):
            sl = slice(start, min(start + chunk, basis.l_h))
            Hc = np.conj(to_blocks(H.images[sl], d))  # (chunk, d2, ph)
            back = Hc * (yhF.data[sl, None, :] / d)
            acc += np.tensordot(VL[sl].T, back, axes=1)
        bh = from_blocks(acc, d, shape).reshape(n, p)
    return bm, bh


# --------------------------------------------------------------------------
# the system


@dataclass(eq=False)
class FusionSystem:
    am: MsBlockMatrix
    ah: HsBlockMatrix
    ar: RegDiagonal
    w_m: float
    w_h: float
    mu: float
    b: np.ndarray  # (l_sub * p_m,)
    const: float = 0.0
    _packed: np.ndarray | None = field(default=None, repr=False)

    @property
    def l_sub(self) -> int:
        return self.am.l_sub

    @property
    def shape(self) -> GridShape:
        return self.am.shape

    @property
    def d(self) -> int:
        return self.ah.d

    @property
    def size(self) -> int:
        return self.l_sub * self.shape.pixels

    def matvec(self, z) -> np.ndarray:
        z = np.asarray(z)
        if z.size != self.size:
            raise ArgumentError(f"vector length {z.size} != {self.size}")
        n, shape, d = self.l_sub, self.shape, self.d
        zz = z.reshape(n, shape.pixels)
        out = np.zeros((n, shape.pixels), dtype=np.complex128)
        if self.w_m:
            out += self.w_m * np.einsum("ijk,jk->ik", self.am.blocks, zz)
        if self.w_h:
            if self._packed is None:
                self._packed = self.ah.packed
            zb = to_blocks(zz.reshape(n, shape.rows, shape.cols), d).reshape(n * d * d, -1)
            t = np.einsum("IJk,Jk->Ik", self._packed, zb).reshape(n, d * d, -1)
            out += self.w_h * from_blocks(t, d, shape).reshape(n, -1)
        if self.mu:
            out += self.mu * (self.ar.diagonal * zz)
        return out.reshape(-1)

    __matmul__ = matvec

    def objective(self, z, Az=None) -> float:
        z = np.asarray(z).reshape(-1)
        Az = self.matvec(z) if Az is None else Az
        return float(0.5 * np.vdot(z, Az).real - np.vdot(self.b, z).real + self.const)

    def diagonal_blocks(self) -> np.ndarray:
        """Per-frequency ``l_sub x l_sub`` diagonal blocks of ``A``, shape ``(p_m, l_sub, l_sub)``."""
        n, d = self.l_sub, self.d
        out = self.w_m * self.am.blocks if self.w_m else np.zeros_like(self.am.blocks)
        if self.w_h:
            diag = np.einsum("ijqqk->ijqk", self.ah.blocks)  # (n, n, d2, ph)
            out = out + self.w_h * from_blocks(diag, d, self.shape).reshape(n, n, -1)
        out = out + self.mu * self.ar.diagonal * np.eye(n)[:, :, None]
        return np.moveaxis(out, -1, 0)

    def to_dense(self) -> np.ndarray:
        """Materialize ``A`` from its stored blocks (no matvec involved)."""
        n, shape, d = self.l_sub, self.shape, self.d
        p = shape.pixels
        if n * p > DENSE_GUARD:
            raise ArgumentError(f"refusing to densify a {n * p} x {n * p} system")
        A = np.zeros((n * p, n * p), dtype=np.complex128)
        idx = np.arange(p).reshape(shape.rows, shape.cols)
        fine_idx = to_blocks(idx, d)  # (d2, ph) fine index of each (q, k)
        for i in range(n):
            for j in range(n):
                blk = np.zeros((p, p), dtype=np.complex128)
                diag = self.w_m * self.am.blocks[i, j]
                if i == j:
                    diag = diag + self.mu * self.ar.diagonal
                blk[np.arange(p), np.arange(p)] += diag
                if self.w_h:
                    for q in range(d * d):
                        for s in range(d * d):
                            blk[fine_idx[q], fine_idx[s]] += self.w_h * self.ah.blocks[i, j, q, s]
                A[i * p : (i + 1) * p, j * p : (j + 1) * p] = blk
        return A

    def with_b(self, b, const=0.0) -> "FusionSystem":
        return FusionSystem(self.am, self.ah, self.ar, self.w_m, self.w_h, self.mu, b, const, self._packed)


def assemble(lm, lh, basis, M, H, spec, shape: GridShape) -> tuple[MsBlockMatrix, HsBlockMatrix, RegDiagonal]:
    """The three observation-independent parts of ``A``."""
    return (
        build_Am(lm, basis, M),
        build_Ah(lh, basis, H, spec),
        build_Ar(shape, basis.l_sub),
    )


def make_system(parts, ymF, yhF, lm, lh, basis, M, H, spec, sigma_m, sigma_h, mu) -> FusionSystem:
    am, ah, ar = parts
    if mu < 0:
        raise ArgumentError("mu must be >= 0")
    w_m, w_h = _weight(sigma_m), _weight(sigma_h)
    bm, bh = build_b_parts(ymF if w_m else None, yhF if w_h else None, lm, lh, basis, M, H, spec)
    b = np.zeros_like(bm)
    const = 0.0
    if w_m:
        b += w_m * bm
        if ymF is not None:
            const += 0.5 * w_m * float(np.vdot(ymF.data, ymF.data).real)
    if w_h:
        b += w_h * bh
        if yhF is not None:
            const += 0.5 * w_h * float(np.vdot(yhF.data, yhF.data).real)
    return FusionSystem(am, ah, ar, w_m, w_h, float(mu), b.reshape(-1), const)


def build_b(ymF, yhF, lm, lh, basis, M, H, spec, sigma_m, sigma_h) -> np.ndarray:
    bm, bh = build_b_parts(ymF, yhF, lm, lh, basis, M, H, spec)
    b = np.zeros_like(bm)
    w_m, w_h = _weight(sigma_m), _weight(sigma_h)
    if w_m:
        b += w_m * bm
    if w_h:
        b += w_h * bh
    return b.reshape(-1)


def dump_system(system: FusionSystem, path) -> None:
    """Debug dump: A_m rows, A_h rows, A_r, b, each as one p_m-length band."""
    n, d, shape = system.l_sub, system.d, system.shape
    ah = from_blocks(system.ah.blocks.reshape(n * n * d * d, d * d, -1), d, shape)
    rows = [
        system.am.blocks.reshape(n * n, -1),
        ah.reshape(n * n * d * d, -1),
        system.ar.diagonal[None, :].astype(np.complex128),
        system.b.reshape(n, -1),
    ]
    payload = np.concatenate(rows)
    meta = np.zeros(payload.shape[0])
    meta[:6] = [n, d, system.w_m, system.w_h, system.mu, system.const]
    write_container(path, SYSTEM_MAGIC, payload, meta, shape.rows, shape.cols)


# --------------------------------------------------------------------------
# dense verification oracle


def dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def dft2_matrix(shape: GridShape) -> np.ndarray:
    """Unitary 2D-DFT acting on row-major flattened images."""
    return np.kron(dft_matrix(shape.rows), dft_matrix(shape.cols))


def dense_oracle(lm, lh, basis, M, H, spec, shape, sigma_m, sigma_h, mu, ymF=None, yhF=None):
    """Explicit ``A`` and ``b`` from Kronecker / block-diagonal operator matrices.

    The aliasing operator is built as ``F_coarse S F_fine^H`` from the
    selection matrix ``S`` and explicit DFT matrices, and the difference
    transfers come from the DFT matrix as well, so nothing here reuses the
    structured code path.
    """
    import scipy.sparse as sp

    n, l_h = basis.l_sub, basis.l_h
    p = shape.pixels
    if n * p > DENSE_GUARD:
        raise ArgumentError(f"dense oracle limited to l_sub*p_m <= {DENSE_GUARD}, got {n * p}")
    coarse = spec.coarse(shape)
    w_m, w_h = _weight(sigma_m), _weight(sigma_h)

    Vk = sp.kron(sp.csr_matrix(basis.V), sp.identity(p), format="csr")
    Lm = sp.kron(sp.csr_matrix(lm.matrix), sp.identity(p), format="csr")
    Lh = sp.kron(sp.csr_matrix(lh.matrix), sp.identity(p), format="csr")
    Mk = sp.diags(M.transfer.reshape(-1))
    Hk = sp.diags(H.transfer.reshape(-1))

    Ff = dft2_matrix(shape)
    Fc = dft2_matrix(coarse)
    sel = np.zeros((coarse.pixels, p))
    for i in range(coarse.rows):
        for j in range(coarse.cols):
            sel[i * coarse.cols + j, (spec.d * i) * shape.cols + spec.d * j] = 1.0
    S_band = Fc @ sel @ Ff.conj().T
    Sk = sp.kron(sp.identity(l_h), sp.csr_matrix(S_band), format="csr")

    kh = np.zeros((shape.rows, shape.cols))
    kv = np.zeros((shape.rows, shape.cols))
    kh[0, 0] += 1
    kh[0, 1 % shape.cols] -= 1
    kv[0, 0] += 1
    kv[1 % shape.rows, 0] -= 1
    Dh = np.sqrt(p) * (Ff @ kh.reshape(-1))
    Dv = np.sqrt(p) * (Ff @ kv.reshape(-1))
    Dband = sp.vstack([sp.diags(Dh), sp.diags(Dv)])
    Dk = sp.kron(sp.identity(n), Dband, format="csr")

    Gm = (Lm @ Mk @ Vk).toarray()
    Gh = (Sk @ Lh @ Hk @ Vk).toarray()
    Dd = Dk.toarray()
    A = w_m * (Gm.conj().T @ Gm) + w_h * (Gh.conj().T @ Gh) + mu * (Dd.conj().T @ Dd)
    b = np.zeros(n * p, dtype=np.complex128)
    if ymF is not None and w_m:
        b += w_m * (Gm.conj().T @ ymF.data.reshape(-1))
    if yhF is not None and w_h:
        b += w_h * (Gh.conj().T @ yhF.data.reshape(-1))
    return A, b
