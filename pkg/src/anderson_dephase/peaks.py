"""Peak detection, topographic prominence and side-peak tracking.

Sites are 0-based indices into the profile array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "PeakRecord",
    "PeakTrack",
    "ProminenceReport",
    "find_peaks",
    "prominence",
    "peak_records",
    "SidePeakTracker",
    "track_side_peaks",
    "NOISE_FLOOR",
]

NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class PeakRecord:
    site: int
    height: float
    left_prominence: float
    right_prominence: float

    @property
    def prominence(self) -> float:
        return min(self.left_prominence, self.right_prominence)


def _values(p) -> np.ndarray:
    return np.ascontiguousarray(getattr(p, "populations", p), dtype=float)


def peak_records(p, floor: float = NOISE_FLOOR) -> list[PeakRecord]:
    """All detected peaks of a profile with their side prominences."""
    sites, heights, left, right = kernels.peak_prominences(_values(p), float(floor))
    return [PeakRecord(int(s), float(h), float(lp), float(rp)) for s, h, lp, rp in zip(sites, heights, left, right)]


def find_peaks(p, floor: float = NOISE_FLOOR) -> np.ndarray:
    """Interior strict local maxima; a plateau counts once, at its leftmost site.

    Peaks lower than ``floor`` are dropped.
    """
    return kernels.peak_prominences(_values(p), float(floor))[0]


def prominence(p, peak_site: int) -> PeakRecord:
    """Side prominences of the peak at ``peak_site``.

    On each side the profile is scanned up to the first strictly higher value;
    the side prominence is the height minus the lowest value passed on the way
    (down to the chain end when nothing higher exists on that side).
    """
    vals = _values(p)
    site = int(peak_site)
    if site not in set(find_peaks(vals, floor=-np.inf).tolist()):
        raise ValueError(f"site {site} is not a peak")
    h = vals[site]

    def side(seq):
        lowest = h
        for v in seq:
            if v > h:
                break
            lowest = min(lowest, v)
        return h - lowest

    return PeakRecord(site, float(h), float(side(vals[site - 1 :: -1])), float(side(vals[site + 1 :])))


@dataclass
class PeakTrack:
    """One peak followed across samples; only matched samples are stored."""

    track_id: int
    times: list = field(default_factory=list)
    sites: list = field(default_factory=list)
    prominences: list = field(default_factory=list)
    heights: list = field(default_factory=list)
    present_at_start: bool = False

    @property
    def last_site(self) -> int:
        return self.sites[-1]

    def growth(self) -> float:
        start = self.prominences[0] if self.present_at_start else 0.0
        return max(self.prominences) - start if self.prominences else 0.0


@dataclass
class ProminenceReport:
    tracked_peaks: list
    main_track: int
    growths: dict
    delta: float
    sample_times: np.ndarray
    reference_gamma: float | None = None

    def side_tracks(self) -> list:
        return [t for t in self.tracked_peaks if t.track_id != self.main_track]


class SidePeakTracker:
    """Online peak tracker fed one profile at a time in increasing time order.

    Peaks are matched to the tracks seen at the previous sample by nearest
    site within ``window``; the main track (the one containing the initial
    maximum) stays matchable even after samples where it was not found.
    """

    def __init__(self, main_site: int, window: int = 5, floor: float = NOISE_FLOOR):
        self.window = int(window)
        self.floor = float(floor)
        self.tracks: list[PeakTrack] = []
        self.sample_times: list[float] = []
        self._main_anchor = int(main_site)
        self._main_id: int | None = None
        self._active: list[int] = []

    @property
    def main_site(self) -> int:
        """Last known site of the main peak."""
        return self._main_anchor

    def _candidates(self) -> list[tuple[int, int]]:
        cands = [(tid, self.tracks[tid].last_site) for tid in self._active]
        if self._main_id is None:
            cands.append((-1, self._main_anchor))
        elif self._main_id not in self._active:
            cands.append((self._main_id, self._main_anchor))
        return cands

    def _match(self, records: list[PeakRecord]) -> dict[int, int]:
        """Nearest-site assignment; returns {track id: record position}.

        The main track picks first and takes the tallest peak within the
        window, so a ragged or merging top never hands the main maximum to a
        side track. The remaining tracks are assigned greedily by distance.
        """
        main_tid = -1 if self._main_id is None else self._main_id
        out, used_peaks = {}, set()
        near = [
            (-rec.height, abs(rec.site - self._main_anchor), k)
            for k, rec in enumerate(records)
            if abs(rec.site - self._main_anchor) <= self.window
        ]
        if near:
            k = min(near)[2]
            out[main_tid] = k
            used_peaks.add(k)
        pairs = []
        for tid, site in self._candidates():
            if tid == main_tid:
                continue
            for k, rec in enumerate(records):
                d = abs(rec.site - site)
                if d <= self.window:
                    pairs.append((d, tid, k))
        pairs.sort()
        used_tracks = set()
        for d, tid, k in pairs:
            if tid in used_tracks or k in used_peaks:
                continue
            used_tracks.add(tid)
            used_peaks.add(k)
            out[tid] = k
        return out

    def main_height(self, p) -> float:
        """Height of the main peak in ``p`` without recording the sample."""
        vals = _values(p)
        records = peak_records(vals, self.floor)
        tid = -1 if self._main_id is None else self._main_id
        k = self._match(records).get(tid)
        return records[k].height if k is not None else float(vals[self._main_anchor])

    def update(self, p, time: float) -> float:
        """Record a sample; returns the main-peak height at this sample."""
        if self.sample_times and time <= self.sample_times[-1]:
            raise ValueError("samples must arrive in increasing time order")
        vals = _values(p)
        records = peak_records(vals, self.floor)
        assignment = self._match(records)
        first = not self.sample_times
        self.sample_times.append(float(time))
        active = []
        matched = set(assignment.values())
        for tid, k in assignment.items():
            if tid == -1:
                continue
            self._append(self.tracks[tid], records[k], time)
            active.append(tid)
        for k, rec in enumerate(records):
            if k in matched and assignment.get(-1) != k:
                continue
            track = PeakTrack(len(self.tracks), present_at_start=first)
            self.tracks.append(track)
            self._append(track, rec, time)
            active.append(track.track_id)
            if assignment.get(-1) == k:
                self._main_id = track.track_id
        self._active = sorted(active)
        main_k = assignment.get(-1 if self._main_id is None or -1 in assignment else self._main_id)
        if main_k is not None:
            self._main_anchor = records[main_k].site
            return records[main_k].height
        return float(vals[self._main_anchor])

    @staticmethod
    def _append(track: PeakTrack, rec: PeakRecord, time: float):
        track.times.append(float(time))
        track.sites.append(rec.site)
        track.prominences.append(rec.prominence)
        track.heights.append(rec.height)

    def report(self, reference_gamma: float | None = None) -> ProminenceReport:
        main = -1 if self._main_id is None else self._main_id
        growths = {t.track_id: t.growth() for t in self.tracks if t.track_id != main}
        delta = max(growths.values()) if growths else 0.0
        return ProminenceReport(
            tracked_peaks=list(self.tracks),
            main_track=main,
            growths=growths,
            delta=max(delta, 0.0),
            sample_times=np.asarray(self.sample_times),
            reference_gamma=reference_gamma,
        )


def track_side_peaks(
    traj,
    main_site: int | None = None,
    window: int = 5,
    floor: float = NOISE_FLOOR,
    reference_gamma: float | None = None,
) -> ProminenceReport:
    """Track every peak of a trajectory and return side-peak growths.

    ``main_site`` defaults to the argmax of the first profile.
    """
    profiles = list(traj.profiles)
    if not profiles:
        raise ValueError("empty trajectory")
    if main_site is None:
        main_site = int(np.argmax(_values(profiles[0])))
    tracker = SidePeakTracker(main_site, window, floor)
    for t, prof in zip(traj.sample_times, profiles):
        tracker.update(prof, t)
    return tracker.report(reference_gamma)
