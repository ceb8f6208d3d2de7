"""Certification report rows and the aggregate metrics computed from them."""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .certify import SplitzCertificate
from .smoothing import ABSTAIN

REPORT_COLUMNS = ["index", "label", "prediction", "p_a_lower", "rs_radius", "gamma_star",
                  "lipschitz_bound", "splitz_radius", "correct"]
DEFAULT_EPSILONS = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5)


class ReportFormatError(ValueError):
    pass


@dataclass
class ReportRow:
    index: int
    label: int
    prediction: int
    p_a_lower: float
    rs_radius: float
    gamma_star: float
    lipschitz_bound: float
    splitz_radius: float

    @property
    def correct(self) -> bool:
        return self.prediction != ABSTAIN and self.prediction == self.label

    @classmethod
    def from_certificate(cls, index: int, label: int, cert: SplitzCertificate) -> "ReportRow":
        return cls(index, int(label), cert.prediction, cert.p_a_lower, cert.rs_radius,
                   cert.gamma_star, cert.lipschitz_bound, cert.splitz_radius)

    def cells(self) -> list[str]:
        pred = "ABSTAIN" if self.prediction == ABSTAIN else str(self.prediction)
        floats = (self.p_a_lower, self.rs_radius, self.gamma_star, self.lipschitz_bound,
                  self.splitz_radius)
        return [str(self.index), str(self.label), pred, *(repr(float(v)) for v in floats),
                str(int(self.correct))]


def write_report(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())


def read_report(path) -> list[ReportRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_COLUMNS:
            raise ReportFormatError(f"{path}: expected columns {','.join(REPORT_COLUMNS)}")
        rows = []
        for lineno, cells in enumerate(reader, 2):
            if not cells:
                continue
            if len(cells) != len(REPORT_COLUMNS):
                raise ReportFormatError(f"{path}:{lineno}: expected {len(REPORT_COLUMNS)} cells")
            try:
                pred = ABSTAIN if cells[2] == "ABSTAIN" else int(cells[2])
                rows.append(ReportRow(int(cells[0]), int(cells[1]), pred,
                                      *(float(c) for c in cells[3:8])))
            except ValueError as exc:
                raise ReportFormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


def certified_accuracy(rows, eps: float) -> float:
    """Fraction of rows predicted correctly with a radius strictly above ``eps``."""
    if not rows:
        raise ValueError("empty report")
    return sum(r.correct and r.splitz_radius > eps for r in rows) / len(rows)


def average_certified_radius(rows) -> tuple[float, float]:
    """ACR over the whole test set, and the mean over correct rows only."""
    if not rows:
        raise ValueError("empty report")
    radii = [r.splitz_radius for r in rows if r.correct]
    total = sum(radii)
    return total / len(rows), (total / len(radii) if radii else 0.0)


def accuracy_table(rows, epsilons=DEFAULT_EPSILONS) -> list[dict]:
    acr, acr_correct = average_certified_radius(rows)
    return [
        {"epsilon": float(eps), "certified_accuracy": certified_accuracy(rows, eps),
         "acr": acr, "acr_correct_only": acr_correct}
        for eps in epsilons
    ]
