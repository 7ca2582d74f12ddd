"""Analysis metrics: solver disagreement, velocity cosine profiles, 1-NN probes,
and metric-over-NFE sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PairedDataset
from .model import evaluate_metric, predict
from .solvers import SolverSpec, solve
from .tensor import no_grad

__all__ = [
    "DiagnosticsReport",
    "disagreement",
    "velocity_cosine_profile",
    "knn_probe",
    "nfe_sweep",
    "build_report",
    "write_report",
]

_REL_GAP_TOL = 1e-2  # regression predictions closer than this count as agreeing


def disagreement(model, ds: PairedDataset,
                 fast: SolverSpec | None = None,
                 reference: SolverSpec | None = None,
                 rel_tol: float = _REL_GAP_TOL) -> float:
    """Fraction of samples whose one-step prediction differs from the adaptive one.

    Classification compares argmax labels; regression counts a sample as
    disagreeing when the relative L2 gap against the adaptive prediction
    exceeds ``rel_tol``. A proxy for trajectory straightness: a perfectly
    straight learned flow is integrated exactly by a single Euler step.
    """
    if ds.n < 1:
        raise ValueError("disagreement needs a nonempty dataset")
    fast = fast or SolverSpec.euler(1)
    reference = reference or SolverSpec.dopri5(1e-3, 1e-3)
    if model.task.is_classification:
        a, _ = predict(model, ds.x, fast)
        b, _ = predict(model, ds.x, reference)
        return float(np.mean(a != b))
    a, _ = model.predict_raw(ds.x, fast)
    b, _ = model.predict_raw(ds.x, reference)
    gap = np.linalg.norm(a - b, axis=1)
    ref = np.maximum(np.linalg.norm(b, axis=1), 1e-12)
    return float(np.mean(gap / ref > rel_tol))


def velocity_cosine_profile(model, ds: PairedDataset, t_grid) -> list[tuple[float, float]]:
    """Mean cosine similarity between predicted and target velocity over time.

    At each t the states and targets come from the schedule applied to the
    encoder outputs. A zero-norm vector on either side contributes cosine 0.
    """
    with no_grad():
        z0 = model.encode_data(ds.x).data
        z1 = model.encode_label(ds.y).data
        s = model.schedule
        out = []
        for t in np.asarray(t_grid, dtype=np.float64):
            t = float(t)
            z_t = float(s.alpha(t)) * z0 + float(s.beta(t)) * z1
            v_t = float(s.dalpha(t)) * z0 + float(s.dbeta(t)) * z1
            pred = model.velocity(z_t, t).data
            out.append((t, _mean_cosine(pred, v_t)))
    return out


def _mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    cos = np.zeros(a.shape[0])
    ok = denom > 0
    cos[ok] = np.sum(a[ok] * b[ok], axis=1) / denom[ok]
    return float(cos.mean())


def knn_probe(ref_emb: np.ndarray, ref_labels: np.ndarray, query_emb: np.ndarray,
              query_labels: np.ndarray, k: int) -> float:
    """k-nearest-neighbour classification accuracy in an embedding space.

    Votes are the majority label among the k nearest references (Euclidean);
    vote ties resolve to the candidate with the smaller summed distance, then
    to the lowest label.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ref_emb = np.asarray(ref_emb, dtype=np.float64)
    query_emb = np.asarray(query_emb, dtype=np.float64)
    if ref_emb.shape[0] < 1:
        raise ValueError("reference set must be nonempty")
    if query_emb.shape[0] < 1:
        raise ValueError("query set must be nonempty")
    ref_labels = np.asarray(ref_labels, dtype=int)
    query_labels = np.asarray(query_labels, dtype=int)
    k = min(k, ref_emb.shape[0])

    diffs = query_emb[:, None, :] - ref_emb[None, :, :]
    dist = np.linalg.norm(diffs, axis=2)
    correct = 0
    for i in range(query_emb.shape[0]):
        order = np.argsort(dist[i], kind="stable")[:k]
        labels = ref_labels[order]
        dists = dist[i][order]
        candidates = {}
        for lab, dd in zip(labels, dists):
            cnt, tot = candidates.get(lab, (0, 0.0))
            candidates[lab] = (cnt + 1, tot + dd)
        best = min(candidates.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))[0]
        if best == query_labels[i]:
            correct += 1
    return correct / query_emb.shape[0]


def nfe_sweep(model, ds: PairedDataset, nfe_list, include_adaptive: bool = True,
              adaptive: SolverSpec | None = None) -> list[dict]:
    """Evaluation metric per Euler step count, plus an adaptive-solver entry
    reporting its measured NFE."""
    rows = []
    for n in nfe_list:
        metric, nfe = evaluate_metric(model, ds, SolverSpec.euler(int(n)))
        rows.append({"solver": f"euler:{int(n)}", "nfe": nfe, "metric": metric})
    if include_adaptive:
        spec = adaptive or SolverSpec.dopri5(1e-3, 1e-3)
        metric, nfe = evaluate_metric(model, ds, spec)
        rows.append({"solver": spec.label(), "nfe": nfe, "metric": metric})
    return rows


@dataclass
class DiagnosticsReport:
    disagreement_fraction: float
    cosine_profile: list[tuple[float, float]]
    knn_accuracy_z0: float
    knn_accuracy_z1hat: float
    nfe_sweep: list[dict]

    def to_dict(self) -> dict:
        return {
            "disagreement_fraction": self.disagreement_fraction,
            "cosine_profile": [{"t": t, "mean_cosine": c} for t, c in self.cosine_profile],
            "knn_accuracy_z0": self.knn_accuracy_z0,
            "knn_accuracy_z1hat": self.knn_accuracy_z1hat,
            "nfe_sweep": self.nfe_sweep,
        }


def _knn_pair(model, ds: PairedDataset, k: int) -> tuple[float, float]:
    """1-NN style probes in the raw-embedding and post-flow spaces.

    Classification: the dataset is split into alternating reference/query
    halves and class labels are probed in z0 space and in solved-z1 space.
    Regression: each sample's query embedding is matched against the label
    embeddings g(y); accuracy is the fraction that retrieve their own pair,
    before the flow (z0) and after it (z1hat).
    """
    with no_grad():
        z0 = model.encode_data(ds.x).data
        res = solve(lambda z, t: model.velocity(z, t).data, z0, 0.0, 1.0,
                    SolverSpec.dopri5(1e-3, 1e-3))
        z1hat = res.z_final.data
        if model.task.is_classification:
            labels = np.argmax(ds.y, axis=1)
            ref = np.arange(ds.n) % 2 == 0
            qry = ~ref
            if not qry.any():
                ref = qry = np.ones(ds.n, dtype=bool)
            acc0 = knn_probe(z0[ref], labels[ref], z0[qry], labels[qry], k)
            acc1 = knn_probe(z1hat[ref], labels[ref], z1hat[qry], labels[qry], k)
            return acc0, acc1
        anchors = model.encode_label(ds.y).data
        pair_ids = np.arange(ds.n)
        acc0 = knn_probe(anchors, pair_ids, z0, pair_ids, 1)
        acc1 = knn_probe(anchors, pair_ids, z1hat, pair_ids, 1)
        return acc0, acc1


def build_report(model, ds: PairedDataset, t_grid=None, nfe_list=(1, 2, 5, 10, 50, 100),
                 k: int = 1) -> DiagnosticsReport:
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, 21)
    acc0, acc1 = _knn_pair(model, ds, k)
    return DiagnosticsReport(
        disagreement_fraction=disagreement(model, ds),
        cosine_profile=velocity_cosine_profile(model, ds, t_grid),
        knn_accuracy_z0=acc0,
        knn_accuracy_z1hat=acc1,
        nfe_sweep=nfe_sweep(model, ds, nfe_list),
    )


def write_report(report: DiagnosticsReport, out_dir) -> dict:
    """Write report.json plus CSVs for the cosine profile and the NFE sweep."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    with (out_dir / "cosine_profile.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_cosine"])
        for t, c in report.cosine_profile:
            w.writerow([repr(t), repr(c)])
    with (out_dir / "nfe_sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nfe", "metric"])
        for row in report.nfe_sweep:
            w.writerow([row["nfe"], repr(row["metric"])])
    return payload
