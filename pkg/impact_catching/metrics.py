"""
Catch quality metrics computed from a simulation trace

Force columns are the force the tool applies on the object in the world
frame, so a resting object reads F_z = m*g.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from impact_catching.config import CONTACT_LOSS_FORCE, PEAK_MIN_SEPARATION

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["strategy", "outcome", "LOI", "DRI", "BTI", "F_max", "VME", "x_tilde"]
DIM_COLUMNS = ["ADIM", "tau_max", "tau_rms"]


@dataclass(frozen=True)
class MetricsReport:
    outcome: str
    LOI: float | None = None  # N*s, first contact to steady state
    LOI_dt_poc: float | None = None  # N*s, over the POC trajectory window
    DRI: float | None = None
    BTI: float | None = None  # ms
    F_max: float | None = None  # N
    VME: float | None = None  # m/s
    x_tilde: float | None = None  # m
    ADIM: float | None = None
    tau_max: float | None = None  # N*m
    tau_rms: float | None = None  # N*m
    contact_impulse: float | None = None  # N*s, first contact episode
    peak_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ============================================================
# Building blocks
# ============================================================
def _window(times: np.ndarray, start: float, end: float) -> np.ndarray:
    return (times >= start - 1e-12) & (times <= end + 1e-12)


def loss_of_impact(times, F_z, weight: float, start: float, end: float) -> float:
    """Integral of |F_z - m g| over [start, end]"""
    times = np.asarray(times, dtype=float)
    mask = _window(times, start, end)
    if mask.sum() < 2:
        return 0.0
    return float(trapezoid(np.abs(np.asarray(F_z, dtype=float)[mask] - weight), times[mask]))


def bouncing_time(times, force_norm, start: float, end: float, threshold: float = CONTACT_LOSS_FORCE) -> float:
    """Total time in [start, end] with the contact force below threshold, in seconds"""
    times = np.asarray(times, dtype=float)
    force_norm = np.asarray(force_norm, dtype=float)
    mask = _window(times, start, end)
    t, f = times[mask], force_norm[mask]
    if len(t) < 2:
        return 0.0
    lost = f[:-1] < threshold
    return float(np.sum(np.diff(t)[lost]))


def find_force_peaks(times, force, threshold: float, min_separation: float = PEAK_MIN_SEPARATION) -> np.ndarray:
    """Indices of local force maxima above threshold, at least min_separation apart"""
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        return np.zeros(0, dtype=int)
    dt = float(np.median(np.diff(times)))
    distance = max(1, int(np.ceil(min_separation / dt - 1e-9)))
    peaks, _ = find_peaks(np.asarray(force, dtype=float), height=threshold, distance=distance)
    return peaks


def damping_ratio_index(p1: float, p2: float) -> float:
    """(1 + (2 pi / delta)^2)^-1/2 with delta the log decrement between two peaks"""
    big, small = max(p1, p2), min(p1, p2)
    if small <= 0:
        raise ValueError("peaks must be positive")
    delta = float(np.log(big / small))
    if delta == 0.0:
        return 0.0
    return float(1.0 / np.sqrt(1.0 + (2.0 * np.pi / delta) ** 2))


def first_contact_impulse(times, force_norm, t_contact: float) -> float:
    """Integral of the force over the first contact episode"""
    times = np.asarray(times, dtype=float)
    force_norm = np.asarray(force_norm, dtype=float)
    start = int(np.searchsorted(times, t_contact - 1e-12))
    end = start
    while end < len(times) and (force_norm[end] > 0.0 or end == start):
        end += 1
    # include the first zero sample so the decay is integrated
    end = min(end + 1, len(times))
    lo = max(start - 1, 0)
    return float(trapezoid(force_norm[lo:end], times[lo:end]))


# ============================================================
# Report
# ============================================================
def compute_metrics(trace) -> MetricsReport:
    """All catch metrics of one run; POC metrics only for caught objects"""
    frame, summary = trace.frame, trace.summary
    outcome = summary["outcome"]
    times = frame["time_s"].to_numpy(dtype=float)
    F = frame[["Fx", "Fy", "Fz"]].to_numpy(dtype=float)
    F_z = F[:, 2]
    F_norm = np.linalg.norm(F, axis=1)
    t_contact = summary.get("t_first_contact")
    if t_contact is None or len(times) == 0:
        logger.info(f"{summary.get('name', 'run')}: no contact, PRC metrics only")
        return MetricsReport(outcome=outcome, F_max=float(np.max(np.abs(F_z), initial=0.0)))

    weight = summary["object_mass"] * summary["gravity"]
    t_end = summary.get("t_steady") or float(times[-1])
    window = _window(times, t_contact, t_end)

    # state just before the first contact
    before = max(int(np.searchsorted(times, t_contact, side="right")) - 1, 0)
    robot_v = frame[["vx", "vy", "vz"]].to_numpy(dtype=float)[before]
    object_v = frame[["obj_vx", "obj_vy", "obj_vz"]].to_numpy(dtype=float)[before]
    vme = float(np.linalg.norm(robot_v - object_v))
    x_tilde = None
    if summary.get("predicted_catch_point") is not None:
        robot_x = frame[["x", "y", "z"]].to_numpy(dtype=float)[before]
        x_tilde = float(np.linalg.norm(robot_x - np.asarray(summary["predicted_catch_point"])))

    tau = frame[[c for c in frame.columns if c.startswith("tau")]].to_numpy(dtype=float)[window]
    tau_max = float(np.max(np.abs(tau))) if len(tau) else None
    tau_rms = float(np.sum(np.sqrt(np.mean(tau**2, axis=0)))) if len(tau) else None

    adim = None
    poc = _window(times, *summary["poc_window"]) if summary.get("poc_window") is not None else window
    if poc.sum() >= 2:
        w = frame["dim"].to_numpy(dtype=float)[poc]
        span = times[poc][-1] - times[poc][0]
        adim = float(trapezoid(w, times[poc]) / span) if span > 0 else float(w[0])

    peaks = find_force_peaks(times[window], F_norm[window], summary["force_threshold"])
    report = dict(
        outcome=outcome, F_max=float(np.max(np.abs(F_z))), VME=vme, x_tilde=x_tilde, ADIM=adim,
        tau_max=tau_max, tau_rms=tau_rms, contact_impulse=first_contact_impulse(times, F_norm, t_contact),
        peak_count=int(len(peaks)),
    )
    if outcome == "caught":
        report["LOI"] = loss_of_impact(times, F_z, weight, t_contact, t_end)
        if summary.get("poc_window") is not None:
            report["LOI_dt_poc"] = loss_of_impact(times, F_z, weight, *summary["poc_window"])
        # the window never opens before the first contact
        bti_start, bti_end = summary["poc_window"] if summary.get("poc_window") is not None else (t_contact, t_end)
        report["BTI"] = 1e3 * bouncing_time(times, F_norm, max(bti_start, t_contact), bti_end)
        if len(peaks) >= 2:
            heights = np.sort(F_norm[window][peaks])[::-1]
            report["DRI"] = damping_ratio_index(heights[0], heights[1])
    return MetricsReport(**report)


def joint_torque_table(trace) -> pd.DataFrame:
    """Per-joint max and RMS torque, the data behind a torque polar plot"""
    tau = trace.frame[[c for c in trace.frame.columns if c.startswith("tau")]]
    return pd.DataFrame({
        "joint": np.arange(1, tau.shape[1] + 1),
        "tau_max": np.max(np.abs(tau.to_numpy()), axis=0),
        "tau_rms": np.sqrt(np.mean(tau.to_numpy() ** 2, axis=0)),
    })


def batch_table(reports: list[tuple[str, MetricsReport]]) -> pd.DataFrame:
    """One row per strategy in the comparison layout, '-' where a metric does not apply"""
    with_dim = any(tag.endswith("DIM") for tag, _ in reports)
    columns = TABLE_COLUMNS + (DIM_COLUMNS if with_dim else [])
    rows = []
    for tag, report in reports:
        values = report.to_dict()
        rows.append([tag] + ["-" if values[c] is None else values[c] for c in columns[1:]])
    return pd.DataFrame(rows, columns=columns)
