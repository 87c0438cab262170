"""Waveform agreement metrics and the evaluation report.

Predictions and references are compared per channel over stance-normalized
waveforms. Correlation pools every trial's samples into one pair of
vectors; relative RMSE is computed per trial against the mean of the two
peak-to-peak ranges and averaged; Bland-Altman agreement is computed over
all pooled samples. CSV outputs round-trip bit-exactly (floats are written
with repr).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ZeroRange, ZeroVariance

CHANNELS = ("fx", "fy", "fz", "mx", "my", "mz")


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two equal-length vectors.

    Raises ZeroVariance when either input is constant, rather than
    returning the NaN numpy would produce.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("correlation needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise ZeroVariance("constant input has no defined correlation")
    return float(da @ db) / denom


def rrmse_percent(pred_trials: list, ref_trials: list) -> float:
    """Relative RMSE in percent, averaged over trials.

    Each trial contributes RMSE / (0.5 * (ptp(pred) + ptp(ref))) * 100.
    A trial whose two ranges are both zero raises ZeroRange.
    """
    if len(pred_trials) != len(ref_trials) or not pred_trials:
        raise ValueError("need matching non-empty trial lists")
    vals = []
    for p, r in zip(pred_trials, ref_trials):
        p = np.asarray(p, dtype=np.float64).ravel()
        r = np.asarray(r, dtype=np.float64).ravel()
        if p.shape != r.shape:
            raise ValueError(f"trial length mismatch {p.shape} vs {r.shape}")
        denom = 0.5 * (float(np.ptp(p)) + float(np.ptp(r)))
        if denom == 0.0:
            raise ZeroRange("both waveforms are flat; relative error undefined")
        rmse = math.sqrt(float(np.mean((p - r) ** 2)))
        vals.append(rmse / denom * 100.0)
    return float(np.mean(vals))


@dataclass
class BlandAltman:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    points: np.ndarray  # (n, 3) columns mean, diff, time fraction


def bland_altman(pred_trials: list, ref_trials: list) -> BlandAltman:
    """Agreement over all pooled samples: diff = pred - ref, bias = mean
    diff, limits = bias +- 1.96 * sd (sd with ddof=1). Points carry the
    pairwise mean, the difference, and the within-trial time fraction."""
    if len(pred_trials) != len(ref_trials) or not pred_trials:
        raise ValueError("need matching non-empty trial lists")
    rows = []
    for p, r in zip(pred_trials, ref_trials):
        p = np.asarray(p, dtype=np.float64).ravel()
        r = np.asarray(r, dtype=np.float64).ravel()
        if p.shape != r.shape:
            raise ValueError(f"trial length mismatch {p.shape} vs {r.shape}")
        t = np.linspace(0.0, 1.0, len(p)) if len(p) > 1 else np.zeros(1)
        rows.append(np.column_stack([(p + r) / 2.0, p - r, t]))
    points = np.concatenate(rows, axis=0)
    diffs = points[:, 1]
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1)) if len(diffs) > 1 else 0.0
    return BlandAltman(
        bias=bias,
        sd=sd,
        loa_low=bias - 1.96 * sd,
        loa_high=bias + 1.96 * sd,
        points=points,
    )


@dataclass
class ChannelStats:
    channel: str
    r: float | None  # None when pooled variance vanished
    r_flag: str | None  # "zero_variance" when r is None
    r_trial_mean: float | None  # mean of per-trial correlations (may skip flats)
    rrmse: float | None
    rrmse_flag: str | None
    ba: BlandAltman


@dataclass
class EvalReport:
    experiment: str
    movement: str
    stance_limb: str
    capture: str  # accNORM | accPCA | markers
    n_train: int
    n_test: int
    channels: dict = field(default_factory=dict)  # name -> ChannelStats

    @property
    def f_mean_r(self) -> float | None:
        return self._mean_r(("fx", "fy", "fz"))

    @property
    def m_mean_r(self) -> float | None:
        return self._mean_r(("mx", "my", "mz"))

    def _mean_r(self, names):
        vals = [self.channels[c].r for c in names if self.channels[c].r is not None]
        return float(np.mean(vals)) if len(vals) == len(names) else None


def build_report(
    predictions: dict,
    references: dict,
    experiment: str = "default",
    movement: str = "all",
    stance_limb: str = "combined",
    capture: str = "accPCA",
    n_train: int = 0,
    n_test: int = 0,
) -> EvalReport:
    """predictions/references: channel name -> list of per-trial waveforms
    (equal trial counts and per-trial lengths). Pooled correlation is the
    headline statistic; the mean of per-trial correlations is kept as an
    auxiliary column (trials without variance are skipped there)."""
    report = EvalReport(
        experiment=experiment,
        movement=movement,
        stance_limb=stance_limb,
        capture=capture,
        n_train=n_train,
        n_test=n_test,
    )
    for ch in CHANNELS:
        preds = predictions[ch]
        refs = references[ch]
        pooled_p = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in preds])
        pooled_r = np.concatenate([np.asarray(r, dtype=np.float64).ravel() for r in refs])
        try:
            r = pearson_r(pooled_p, pooled_r)
            r_flag = None
        except ZeroVariance:
            r, r_flag = None, "zero_variance"
        trial_rs = []
        for p, rf in zip(preds, refs):
            try:
                trial_rs.append(pearson_r(p, rf))
            except ZeroVariance:
                continue
        r_trial_mean = float(np.mean(trial_rs)) if trial_rs else None
        try:
            rr = rrmse_percent(preds, refs)
            rr_flag = None
        except ZeroRange:
            rr, rr_flag = None, "zero_range"
        report.channels[ch] = ChannelStats(
            channel=ch,
            r=r,
            r_flag=r_flag,
            r_trial_mean=r_trial_mean,
            rrmse=rr,
            rrmse_flag=rr_flag,
            ba=bland_altman(preds, refs),
        )
    return report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


REPORT_COLUMNS = (
    ["experiment", "movement", "stance_limb", "capture", "n_train", "n_test"]
    + [f"r_{c}" for c in CHANNELS]
    + ["f_mean_r", "m_mean_r"]
    + [f"r_trial_{c}" for c in CHANNELS]
    + [f"rrmse_{c}" for c in CHANNELS]
    + [f"ba_bias_{c}" for c in CHANNELS]
    + [f"ba_loa_low_{c}" for c in CHANNELS]
    + [f"ba_loa_high_{c}" for c in CHANNELS]
    + [f"flag_{c}" for c in CHANNELS]
)


def emit_report(
    report: EvalReport,
    out_dir: str | Path,
    predictions: dict | None = None,
    references: dict | None = None,
    svg: bool = False,
) -> Path:
    """Write report.csv (one row per report), per-channel overlay band CSVs
    (stance percent, reference min/mean/max, prediction min/mean/max across
    trials) and Bland-Altman point CSVs, plus an optional SVG figure.
    Floats are written with repr so the files re-parse to the same
    doubles."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    row = {
        "experiment": report.experiment,
        "movement": report.movement,
        "stance_limb": report.stance_limb,
        "capture": report.capture,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "f_mean_r": _fmt(report.f_mean_r),
        "m_mean_r": _fmt(report.m_mean_r),
    }
    for ch in CHANNELS:
        st = report.channels[ch]
        row[f"r_{ch}"] = _fmt(st.r)
        row[f"r_trial_{ch}"] = _fmt(st.r_trial_mean)
        row[f"rrmse_{ch}"] = _fmt(st.rrmse)
        row[f"ba_bias_{ch}"] = _fmt(st.ba.bias)
        row[f"ba_loa_low_{ch}"] = _fmt(st.ba.loa_low)
        row[f"ba_loa_high_{ch}"] = _fmt(st.ba.loa_high)
        row[f"flag_{ch}"] = st.r_flag or st.rrmse_flag or ""
    report_path = out_dir / "report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS))
        writer.writeheader()
        writer.writerow(row)

    if predictions is not None and references is not None:
        for ch in CHANNELS:
            preds = np.stack(
                [np.asarray(p, dtype=np.float64).ravel() for p in predictions[ch]]
            )
            refs = np.stack(
                [np.asarray(r, dtype=np.float64).ravel() for r in references[ch]]
            )
            pct = np.linspace(0.0, 100.0, preds.shape[1]) if preds.shape[1] > 1 else [0.0]
            with open(out_dir / f"overlay_{ch}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["stance_pct", "ref_min", "ref_mean", "ref_max",
                                 "pred_min", "pred_mean", "pred_max"])
                for k in range(preds.shape[1]):
                    writer.writerow([
                        repr(float(pct[k])),
                        repr(float(refs[:, k].min())),
                        repr(float(refs[:, k].mean())),
                        repr(float(refs[:, k].max())),
                        repr(float(preds[:, k].min())),
                        repr(float(preds[:, k].mean())),
                        repr(float(preds[:, k].max())),
                    ])
            ba = report.channels[ch].ba
            with open(out_dir / f"bland_altman_{ch}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["mean", "diff", "time"])
                for m, d, t in ba.points:
                    writer.writerow([repr(float(m)), repr(float(d)), repr(float(t))])

    if svg and predictions is not None and references is not None:
        _emit_svg(report, predictions, references, out_dir / "report.svg")
    return report_path


def _emit_svg(report: EvalReport, predictions: dict, references: dict, path: Path):
    import matplotlib

    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 6, figsize=(22, 7))
    for col, ch in enumerate(CHANNELS):
        ax = axes[0][col]
        for p, r in zip(predictions[ch][:20], references[ch][:20]):
            t = np.linspace(0.0, 100.0, len(np.ravel(p)))
            ax.plot(t, np.ravel(r), color="0.6", lw=0.5)
            ax.plot(t, np.ravel(p), color="tab:red", lw=0.5, alpha=0.7)
        st = report.channels[ch]
        r_txt = "n/a" if st.r is None else f"{st.r:.3f}"
        ax.set_title(f"{ch} (r={r_txt})")
        ax.set_xlabel("% stance")
        ba = st.ba
        ax2 = axes[1][col]
        ax2.scatter(ba.points[:, 0], ba.points[:, 1], s=1, alpha=0.3)
        for y in (ba.bias, ba.loa_low, ba.loa_high):
            ax2.axhline(y, color="k", lw=0.6, ls="--")
        ax2.set_xlabel("mean")
        ax2.set_ylabel("diff")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
