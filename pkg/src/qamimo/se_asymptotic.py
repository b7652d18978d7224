"""Closed-form (MRC) and large-array (MMSE) evaluation of the UatF terms.

MRC
    Exact expressions for Gaussian estimates.  The coherent co-pilot
    quantities are evaluated without inverting any correlation matrix using
    ``R' R^-1 B = p tau_p R' Sigma Psi Sigma R`` (``Psi`` is shared by all users
    on a pilot), which also gives

        Xi_mm = B_mm (p tau_p R' Sigma Psi Sigma R')_mm + |p tau_p (R' Sigma Psi Sigma R)_mm|^2

    for the fourth-order term of the quantization noise.

QA-M-MMSE / QA-S-MMSE
    Deterministic equivalents with ``Delta_a = (p_a / p_jk) B_a``,
    ``D = Z / (p_jk M)`` and ``alpha = sigma2 / (p_jk M)``.  Scaling every
    input by ``c`` scales ``Gamma`` by ``1/c`` and leaves ``delta`` fixed, so
    one solve with ``Delta_a = p_a B_a``, ``D = Z/M``, ``alpha = sigma2/M``
    serves every anchor user of a BS: the anchored matrices are
    ``p_jk * Gamma`` and ``p_jk^2 * Gamma'``.  In particular the
    ``tr(B_a T_a)/M`` factors in the denominators are the ``delta_a`` of that
    single solve.

    The cell sums run over all ``L`` cells and each interference term is
    weighted by the interferer's own power ``p_{i,k'}``, consistent with the
    definitions of the D and E terms.
"""

from __future__ import annotations

import numpy as np

from .channel import sqrt_psd
from .combining import z_matrix
from .correlation import regularized_inverse
from .estimation import EstimationStats
from .rmt import DetEq
from .se_montecarlo import SeTerms


def vm_tensor(B, m: int) -> np.ndarray:
    """``V^m = B * B_mm + b_m b_m^H`` (``b_m`` the m-th column of ``B``)."""
    B = np.asarray(B)
    b = B[:, m]
    return B * B[m, m] + np.outer(b, b.conj())


def vm_tensor_direct(B, m: int) -> np.ndarray:
    """``V^m`` from the quadruple-index sum over ``T = B^{1/2}``.

    ``V_{ab} = sum_{c,d} t_ac conj(t_bc) |t_md|^2 + t_ac conj(t_mc) conj(t_bd) t_md``.
    """
    T = sqrt_psd(B)
    tm = T[m]
    first = np.einsum("ac,bc,d->ab", T, T.conj(), np.abs(tm) ** 2)
    second = np.einsum("ac,c,bd,d->ab", T, tm.conj(), T.conj(), tm)
    return first + second


def _core(stats: EstimationStats, j: int, t: int) -> np.ndarray:
    """``Sigma Psi Sigma`` at BS ``j`` for pilot ``t``."""
    a = stats.alpha[j]
    return a[:, None] * stats.Psi[j, t] * a[None, :]


def xi_diag(stats: EstimationStats, j: int, k: int, ik2) -> np.ndarray:
    """Diagonal of ``Xi`` for user ``(j,k)`` and co-pilot ``ik2``, inverse-free."""
    i2, k2 = ik2
    t = stats.pilots.pilot_index[j, k]
    S = _core(stats, j, t)
    R, R2 = stats.R[j, j, k], stats.R[j, i2, k2]
    p = stats.powers[j, k]
    tau = stats.tau_p
    B = stats.B[j, j, k]
    diag_r2 = np.real(np.einsum("mn,nl,lm->m", R2, S, R2))
    kd = np.einsum("mn,nl,lm->m", R2, S, R)
    return np.real(np.diag(B)) * p * tau * diag_r2 + (p * tau) ** 2 * np.abs(kd) ** 2


def xi_diag_tensor(stats: EstimationStats, j: int, k: int, ik2) -> np.ndarray:
    """Diagonal of ``Xi = R' R^-1 V^m R^-1 R'`` using explicit (regularized) inverses."""
    i2, k2 = ik2
    R, R2 = stats.R[j, j, k], stats.R[j, i2, k2]
    Rinv, _ = regularized_inverse(R, eps=1e-14)
    W = R2 @ Rinv
    B = stats.B[j, j, k]
    return np.array([np.real((W @ vm_tensor(B, m) @ W.conj().T)[m, m]) for m in range(stats.M)])


def mrc_closed_form(stats: EstimationStats, j: int, k: int) -> dict:
    """Exact MRC terms for user ``(j, k)``.

    Returns a dict with ``A``, ``F``, ``G``, ``interference`` (``B+C+D+E``) and
    ``SE``-ready values.
    """
    if not stats.aware:
        raise ValueError("closed form needs the quantization-aware estimator")
    p_all = stats.powers
    p = p_all[j, k]
    tau = stats.tau_p
    t = stats.pilots.pilot_index[j, k]
    S = _core(stats, j, t)
    R = stats.R[j, j, k]
    B = stats.B[j, j, k]
    Bd = np.real(np.diag(B))
    alpha = stats.alpha[j]
    w = (1.0 - alpha) / alpha
    trB = float(np.real(np.trace(B)))
    A = p * trB**2
    F = stats.sigma2 * trB
    # sum over all users of p tr(B R')
    inter = float(np.real(np.einsum("ik,mn,iknm->", p_all, B, stats.R[j])))
    copilot = stats.pilots.copilot_mask()[j, k]  # (L, K)
    G = stats.sigma2 * float(np.sum(w * Bd))
    L, K = p_all.shape
    for i in range(L):
        for kk in range(K):
            p2 = p_all[i, kk]
            R2 = stats.R[j, i, kk]
            if copilot[i, kk]:
                Kmat = R2 @ S @ R
                inter += p2**2 * p * tau**2 * np.abs(np.trace(Kmat)) ** 2
                xi = (p2**2 / p) * xi_diag(stats, j, k, (i, kk))
                G += float(np.sum(w * (xi + p2 * np.real(np.diag(stats.C[j, i, kk])) * Bd)))
            else:
                G += float(np.sum(w * p2 * np.real(np.diag(R2)) * Bd))
    return {"A": A, "interference": inter - A, "F": F, "G": G}


def _terms_from_dicts(rows, L, K, prelog) -> SeTerms:
    get = lambda key: np.array([[rows[(j, k)].get(key, 0.0) for k in range(K)] for j in range(L)])
    return SeTerms(A=get("A"), B=get("B"), C=get("C"), D=get("D"), E=get("E"), F=get("F"), G=get("G"),
                   prelog=prelog)


def mrc_terms(stats: EstimationStats, prelog: float) -> SeTerms:
    """Closed-form MRC terms of every user.

    The aggregate ``B + C + D + E`` is stored in ``B``; the other interference
    fields are zero.
    """
    L, K = stats.powers.shape
    rows = {}
    for j in range(L):
        for k in range(K):
            r = mrc_closed_form(stats, j, k)
            rows[(j, k)] = {"A": r["A"], "B": max(r["interference"], 0.0), "F": r["F"], "G": r["G"]}
    out = _terms_from_dicts(rows, L, K, prelog)
    out.interference_total = out.B.copy()
    return out


def _mmse_bs(stats: EstimationStats, j: int, multicell: bool, tol: float, coherent_copilot: bool) -> dict:
    L, K, M = stats.L, stats.K, stats.M
    p = stats.powers
    sigma2 = stats.sigma2
    Z = z_matrix(stats, j, multicell=multicell, quant_aware=True)
    if multicell:
        users = [(i, kk) for i in range(L) for kk in range(K)]
    else:
        users = [(j, kk) for kk in range(K)]
    index = {u: n for n, u in enumerate(users)}
    Deltas = np.stack([p[u] * stats.B[j, u[0], u[1]] for u in users])
    eq = DetEq(Deltas, Z / M, sigma2 / M, M=M, tol=tol)
    delta = eq.delta
    # C matrices whose Gamma' traces are needed
    all_users = [(i, kk) for i in range(L) for kk in range(K)]
    Bs = np.stack([stats.B[j, i, kk] for (i, kk) in all_users])
    Cs = np.stack([stats.C[j, i, kk] for (i, kk) in all_users])
    Q = np.diag(stats.quant_term()[j])
    mats = np.concatenate([Bs, Cs, np.eye(M)[None], Q[None]])
    x = eq.x_vectors(mats)
    nU = len(all_users)
    copilot = stats.pilots.copilot_mask()
    rows = {}
    for k in range(K):
        pk = p[j, k]
        Bk = stats.B[j, j, k]
        dk = delta[index[(j, k)]]
        tr = eq.trace_prime(Bk, mats, x) * pk**2 / M**2  # tr(B T'_C)/M^2 for the anchored solve
        trB, trC, trI, trQ = tr[:nU], tr[nU:2 * nU], tr[2 * nU], tr[2 * nU + 1]
        den = (1.0 + dk) ** 2
        A = pk * (dk / (1.0 + dk)) ** 2
        C_term = D_term = E_term = 0.0
        for n, (i, kk) in enumerate(all_users):
            pw = p[i, kk]
            E_term += pw * trC[n] / den
            if (i, kk) == (j, k):
                continue
            if multicell:
                dn = delta[index[(i, kk)]]
                val = pw * trB[n] / (den * (1.0 + dn) ** 2)
                if coherent_copilot and i != j and copilot[j, k, i, kk]:
                    val += _coherent(stats, eq.Gamma * pk, j, k, i, kk) / (den * (1.0 + dn) ** 2)
            else:
                if i == j:
                    dn = delta[index[(i, kk)]]
                    val = pw * trB[n] / (den * (1.0 + dn) ** 2)
                elif copilot[j, k, i, kk]:
                    val = _coherent(stats, eq.Gamma * pk, j, k, i, kk) / den
                else:
                    val = pw * trB[n] / den
            if i == j:
                C_term += val
            else:
                D_term += val
        rows[(j, k)] = {"A": A, "B": 0.0, "C": C_term, "D": D_term, "E": E_term,
                        "F": sigma2 * trI / den, "G": trQ / den, "delta": dk,
                        "iterations": eq.state.iterations}
    return rows


def _coherent(stats, T, j, k, i, kk) -> float:
    """``p' |sqrt(p'/p) tr(R' R^-1 B T) / M|^2`` with ``R' R^-1 B = p tau R' S R``."""
    p, p2 = stats.powers[j, k], stats.powers[i, kk]
    t = stats.pilots.pilot_index[j, k]
    K_ = stats.tau_p * stats.R[j, i, kk] @ _core(stats, j, t) @ stats.R[j, j, k]
    val = np.sqrt(p2 * p) * np.trace(K_ @ T) / stats.M  # sqrt(p'/p) * p, safe at p = 0
    return float(p2 * np.abs(val) ** 2)


def qa_m_mmse_asymptotic(stats: EstimationStats, j: int, k: int, tol: float = 1e-10,
                         coherent_copilot: bool = False) -> dict:
    """Large-array QA-M-MMSE terms of user ``(j, k)``.

    ``coherent_copilot=True`` adds the coherent co-pilot interference
    ``p' |tr(R' R^-1 B Gamma)/M|^2`` (scaled like the other interference
    terms) that the plain large-array limit leaves out.
    """
    return _mmse_bs(stats, j, True, tol, coherent_copilot)[(j, k)]


def qa_s_mmse_asymptotic(stats: EstimationStats, j: int, k: int, tol: float = 1e-10) -> dict:
    """Large-array QA-S-MMSE terms of user ``(j, k)``."""
    return _mmse_bs(stats, j, False, tol, False)[(j, k)]


def asymptotic_terms(stats: EstimationStats, scheme: str, prelog: float, tol: float = 1e-10,
                     coherent_copilot: bool = False) -> SeTerms:
    """Terms of every user for ``"MRC"``, ``"QA-M-MMSE"`` or ``"QA-S-MMSE"``."""
    from .combining import canonical_scheme

    scheme = canonical_scheme(scheme)
    if scheme == "MRC":
        return mrc_terms(stats, prelog)
    if scheme not in ("QA-M-MMSE", "QA-S-MMSE"):
        raise ValueError(f"no asymptotic expression for {scheme}")
    if not stats.aware:
        raise ValueError("asymptotic expressions need the quantization-aware estimator")
    multicell = scheme == "QA-M-MMSE"
    rows = {}
    for j in range(stats.L):
        rows.update(_mmse_bs(stats, j, multicell, tol, coherent_copilot))
    return _terms_from_dicts(rows, stats.L, stats.K, prelog)
