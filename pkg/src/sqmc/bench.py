"""Replication harness: MSE of Monte Carlo vs quasi-Monte Carlo smoothers.

Runs seeded replications of (algorithm, smoothing method, N) combinations
against a fixed data realisation, compares both algorithm families to a
reference trajectory of smoothing means, and reports per-time-step gain
factors (Monte Carlo MSE over quasi-Monte Carlo MSE) with bootstrap
intervals.  Everything is deterministic given the base seed; wall-clock
times live in their own CSV column so the rest of the output is
byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filtering import ParticleHistory, run_smc, run_sqmc
from .models import FeynmanKacModel, build_model, kalman_smoother
from .smoothing import (
    backward_sampling,
    forward_smoothing,
    marginal_backward_weights,
    marginal_smoothing_estimate,
    prepare_backward_input,
    resolve_phi,
    smoothing_estimate,
)

__all__ = [
    "RunRecord",
    "GainTable",
    "run_single",
    "run_replications",
    "compute_gain",
    "make_reference",
    "records_to_csv",
    "records_from_csv",
    "gains_to_csv",
    "run_benchmark",
]

ALGOS = ("smc", "sqmc")
METHODS = ("filter", "forward", "marginal", "backward-qmc", "backward-iid")

# spawn key reserved for backward-pass inputs so they never share a stream
# with the forward pass's per-step point sets
_BACKWARD_SPAWN = 1_000_000


@dataclass
class RunRecord:
    """One replication: who ran, on what, and its per-time estimates."""

    algo: str
    method: str
    model_id: str
    n: int
    T: int
    seed: int
    estimates: np.ndarray
    wall_seconds: float

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, float)
        if len(self.estimates) != self.T + 1:
            raise ValueError("per-t estimate vector must have length T+1")


@dataclass
class GainTable:
    """Per-time MSEs of two record sets against one reference."""

    label: str
    mse_a: np.ndarray
    mse_b: np.ndarray
    gain: np.ndarray
    gain_lo90: np.ndarray
    gain_hi90: np.ndarray
    n_reps: int
    reference_desc: str

    @property
    def share_above_one(self) -> float:
        return float(np.mean(self.gain > 1.0))


def _backward_seed(seed: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_BACKWARD_SPAWN,))
    return int(ss.generate_state(1, np.uint64)[0])


def _history_estimate(hist: ParticleHistory, phi) -> np.ndarray:
    f = resolve_phi(phi)
    return np.array([w @ f(x) for w, x in zip(hist.weights, hist.xs)])


def run_single(model: FeynmanKacModel, algo: str, method: str, n: int, seed: int, phi="mean:0"):
    """One (algorithm, method) run; returns per-t estimates of phi."""
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "forward":
        if algo != "sqmc":
            raise ValueError("forward smoothing is defined for the sqmc driver")
        traj, _ = forward_smoothing(model, n, seed)
        return smoothing_estimate(traj, phi)
    hist = run_smc(model, n, seed) if algo == "smc" else run_sqmc(model, n, seed)
    if method == "filter":
        return _history_estimate(hist, phi)
    if method == "marginal":
        sw = marginal_backward_weights(model, hist)
        return marginal_smoothing_estimate(sw, hist, phi)
    kind = "qmc" if method == "backward-qmc" else "iid"
    us = prepare_backward_input(n, model.T, kind, _backward_seed(seed))
    traj = backward_sampling(model, hist, us)
    return smoothing_estimate(traj, phi)


def run_replications(
    model: FeynmanKacModel,
    algo: str,
    method: str,
    n: int,
    reps: int,
    base_seed: int,
    phi="mean:0",
    jobs: int = 1,
) -> list[RunRecord]:
    """reps independent runs seeded base_seed..base_seed+reps-1.

    Any single-run failure aborts the whole batch with the failing seed in
    the exception; there is no silent skipping.
    """
    if reps < 2:
        raise ValueError("need at least 2 replications")

    def one(seed: int) -> RunRecord:
        start = time.perf_counter()
        try:
            est = run_single(model, algo, method, n, seed, phi)
        except Exception as exc:
            raise RuntimeError(
                f"replication failed: algo={algo} method={method} N={n} seed={seed}: {exc}"
            ) from exc
        return RunRecord(
            algo=algo,
            method=method,
            model_id=model.model_id,
            n=n,
            T=model.T,
            seed=seed,
            estimates=est,
            wall_seconds=time.perf_counter() - start,
        )

    seeds = range(base_seed, base_seed + reps)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, seeds))
    else:
        records = [one(s) for s in seeds]
    # aggregation is order-independent: keep records sorted by seed
    return sorted(records, key=lambda r: r.seed)


def compute_gain(
    records_a: list[RunRecord],
    records_b: list[RunRecord],
    reference: np.ndarray,
    label: str = "",
    reference_desc: str = "",
    n_boot: int = 1000,
    boot_seed: int = 2024,
) -> GainTable:
    """Per-t gain = MSE(records_a) / MSE(records_b) against the reference.

    The 90% interval comes from bootstrapping replication indices (paired
    across the two record sets), seeded for reproducibility.
    """
    if len(records_a) != len(records_b):
        raise ValueError("record sets must have equal replication counts")
    ts = {r.T for r in records_a} | {r.T for r in records_b}
    if len(ts) != 1:
        raise ValueError("records with mismatched T cannot be aggregated")
    T = ts.pop()
    reference = np.asarray(reference, float)
    if len(reference) != T + 1:
        raise ValueError(f"reference must have length T+1 = {T + 1}")
    err_a = np.array([r.estimates for r in records_a]) - reference
    err_b = np.array([r.estimates for r in records_b]) - reference
    mse_a = np.mean(err_a ** 2, axis=0)
    mse_b = np.mean(err_b ** 2, axis=0)
    if np.any(mse_b == 0.0) or np.any(mse_a == 0.0):
        raise ValueError("degenerate zero MSE; gain undefined")
    gain = mse_a / mse_b
    reps = len(records_a)
    rng = np.random.Generator(np.random.Philox(key=boot_seed))
    boots = np.empty((n_boot, T + 1))
    chunk = max(1, 4_000_000 // ((T + 1) * reps))
    for lo in range(0, n_boot, chunk):
        hi = min(lo + chunk, n_boot)
        idx = rng.integers(0, reps, size=(hi - lo, reps))
        num = np.mean(err_a[idx] ** 2, axis=1)
        den = np.mean(err_b[idx] ** 2, axis=1)
        with np.errstate(divide="ignore"):
            boots[lo:hi] = num / den
    return GainTable(
        label=label,
        mse_a=mse_a,
        mse_b=mse_b,
        gain=gain,
        gain_lo90=np.quantile(boots, 0.05, axis=0),
        gain_hi90=np.quantile(boots, 0.95, axis=0),
        n_reps=reps,
        reference_desc=reference_desc,
    )


# -- reference trajectories ------------------------------------------------------------


def make_reference(model: FeynmanKacModel, cfg: dict, phi="mean:0", cache_path=None,
                   require_cached: bool = False):
    """Per-t reference values of phi with a provenance string.

    lg1d uses the exact smoother; other models run a high-N quasi-Monte
    Carlo marginal smoothing pass at a fixed seed (cached to disk when a
    path is given, and reloaded from it on later calls).  With
    ``require_cached`` a missing stored reference is an error instead of a
    trigger for recomputation.
    """
    if require_cached and (cache_path is None or not Path(cache_path).exists()):
        raise FileNotFoundError(f"stored reference file not found: {cache_path}")
    if model.model_id == "lg1d":
        if str(phi) != "mean:0":
            raise ValueError("exact reference available for mean:0 only")
        ref = kalman_smoother(model.params, model.ys[:, 0])["smooth_mean"]
        return ref, "kalman-smoother"
    ref_n = int(cfg.get("ref_n", 2 ** 15))
    ref_seed = int(cfg.get("ref_seed", 90210))
    desc = f"sqmc-marginal N={ref_n} seed={ref_seed}"
    if cache_path is not None and Path(cache_path).exists():
        with open(cache_path) as f:
            header = f.readline().strip()
            stored_desc = header.split("# reference: ")[-1]
            vals = np.array([float(line) for line in f])
        if stored_desc != desc:
            raise ValueError(
                f"stored reference {stored_desc!r} does not match requested {desc!r}"
            )
        if len(vals) != model.T + 1:
            raise ValueError("stored reference length does not match the horizon")
        return vals, desc
    hist = run_sqmc(model, ref_n, ref_seed)
    sw = marginal_backward_weights(model, hist)
    ref = marginal_smoothing_estimate(sw, hist, phi)
    if cache_path is not None:
        with open(cache_path, "w") as f:
            f.write(f"# reference: {desc}\n")
            for v in ref:
                f.write(repr(float(v)) + "\n")
    return ref, desc


# -- CSV persistence ---------------------------------------------------------------------

_RECORD_HEADER = ["algo", "method", "model", "N", "T", "seed", "t", "estimate", "wall_seconds"]


def records_to_csv(records: list[RunRecord], path, append: bool = False) -> None:
    """Long-format rows, one per (replication, t); append-only friendly.

    ``wall_seconds`` is the only nondeterministic column and sits last so
    determinism checks can drop it.
    """
    mode = "a" if append else "w"
    new_file = not (append and Path(path).exists() and Path(path).stat().st_size > 0)
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(_RECORD_HEADER)
        for r in records:
            for t, est in enumerate(r.estimates):
                writer.writerow(
                    [r.algo, r.method, r.model_id, r.n, r.T, r.seed, t,
                     repr(float(est)), repr(float(r.wall_seconds))]
                )


def records_from_csv(path) -> list[RunRecord]:
    rows = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            key = (row["algo"], row["method"], row["model"], int(row["N"]), int(row["seed"]))
            rows.setdefault(key, {"T": int(row["T"]), "est": {}, "wall": float(row["wall_seconds"])})
            rows[key]["est"][int(row["t"])] = float(row["estimate"])
    records = []
    for (algo, method, model_id, n, seed), data in rows.items():
        est = np.array([data["est"][t] for t in range(data["T"] + 1)])
        records.append(
            RunRecord(algo, method, model_id, n, data["T"], seed, est, data["wall"])
        )
    return sorted(records, key=lambda r: (r.algo, r.method, r.n, r.seed))


def gains_to_csv(tables: list[GainTable], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "t", "mse_a", "mse_b", "gain", "gain_lo90", "gain_hi90",
                         "n_reps", "reference"])
        for tab in tables:
            for t in range(len(tab.gain)):
                writer.writerow(
                    [tab.label, t, repr(float(tab.mse_a[t])), repr(float(tab.mse_b[t])),
                     repr(float(tab.gain[t])), repr(float(tab.gain_lo90[t])),
                     repr(float(tab.gain_hi90[t])), tab.n_reps, tab.reference_desc]
                )


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


# -- top-level benchmark -------------------------------------------------------------------


def run_benchmark(
    cfg: dict,
    methods: list[str],
    algos: list[str],
    ns: list[int],
    reps: int,
    base_seed: int,
    outdir,
    phi="mean:0",
    quick: bool = False,
    jobs: int = 1,
) -> dict:
    """Full experiment: replications, reference, gain tables, manifest.

    The quick profile shrinks the horizon to T=99, the replication count
    to 20, N to 256, and the stored-reference size to N=4096, so the whole
    pipeline exercises end to end in minutes.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t_override = None
    ref_cfg = dict(cfg)
    if quick:
        t_override = min(99, int(cfg["T"]))
        reps = min(reps, 20)
        ns = [min(n, 256) for n in ns]
        ref_cfg.setdefault("ref_n", 2 ** 12)
    model = build_model(cfg, t_override=t_override)
    all_records: dict[tuple, list[RunRecord]] = {}
    records_path = outdir / "records.csv"
    first = True
    for method in methods:
        for algo in algos:
            if method == "forward" and algo != "sqmc":
                continue
            for n in ns:
                recs = run_replications(model, algo, method, n, reps, base_seed, phi, jobs)
                all_records[(algo, method, n)] = recs
                records_to_csv(recs, records_path, append=not first)
                first = False
    reference, ref_desc = make_reference(
        model, ref_cfg, phi, cache_path=outdir / "reference.csv"
    )
    tables = []
    for method in methods:
        for n in ns:
            a, b = all_records.get(("smc", method, n)), all_records.get(("sqmc", method, n))
            if a and b:
                tables.append(
                    compute_gain(a, b, reference,
                                 label=f"smc-vs-sqmc:{method}:N={n}",
                                 reference_desc=ref_desc)
                )
    for n in ns:
        hyb = all_records.get(("sqmc", "backward-iid", n))
        qmc = all_records.get(("sqmc", "backward-qmc", n))
        if hyb and qmc:
            tables.append(
                compute_gain(hyb, qmc, reference,
                             label=f"hybrid-vs-qmc:backward:N={n}",
                             reference_desc=ref_desc)
            )
    gains_to_csv(tables, outdir / "gains.csv")
    manifest = {
        "config": cfg,
        "quick": quick,
        "methods": methods,
        "algos": algos,
        "N": ns,
        "reps": reps,
        "base_seed": base_seed,
        "phi": str(phi),
        "T_effective": model.T,
        "reference": ref_desc,
        "build": _git_describe(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(outdir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return {"records": all_records, "gains": tables, "manifest": manifest}
