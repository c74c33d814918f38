"""Human case-study ingestion and aggregation.

Responses arrive as CSV rows (one respondent rating one image on four 1-5
criteria plus an artist/computer attribution guess).  Aggregation is
two-stage: per-image means over respondents first, then per-group mean and
population standard deviation over those per-image means.  Incomplete
respondent x image grids are rejected unless explicitly allowed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from io import StringIO

import numpy as np

from .errors import FormatError, InsufficientDataError, ValidationError

CRITERIA = ("interesting", "inspiring", "innovative", "overall")
GROUPS = ("real", "generated")
ATTRIBUTIONS = ("artist", "computer")

_COLUMNS = ("respondent_id", "image_id", "group",
            "interesting", "inspiring", "innovative", "overall", "attribution")


@dataclass
class SurveyResponse:
    respondent_id: str
    image_id: str
    group: str
    interesting: float
    inspiring: float
    innovative: float
    overall: float
    attribution: str

    def score(self, criterion: str) -> float:
        return getattr(self, criterion)


@dataclass
class CaseStudyReport:
    # criteria[criterion][group] -> {"mean": float, "std": float}
    criteria: dict
    # attribution[group] -> fraction of judgments answered "artist"
    attribution: dict
    counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"criteria": self.criteria, "attribution": self.attribution,
                           "counts": self.counts}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CaseStudyReport":
        try:
            doc = json.loads(text)
            return cls(criteria=doc["criteria"], attribution=doc["attribution"],
                       counts=doc["counts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad case-study report document: {exc}") from None

    def to_csv(self) -> str:
        out = StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["criterion", "real", "generated"])
        for crit in CRITERIA:
            row = [crit.capitalize()]
            for group in GROUPS:
                cell = self.criteria[crit][group]
                row.append(f"{cell['mean']:.2f} ± {cell['std']:.2f}")
            writer.writerow(row)
        writer.writerow([])
        writer.writerow(["criterion", "real_mean", "generated_mean"])
        for crit in CRITERIA:
            writer.writerow([crit.capitalize()]
                            + [f"{self.criteria[crit][g]['mean']:.2f}" for g in GROUPS])
        return out.getvalue()


def parse_responses(path) -> list[SurveyResponse]:
    """Read and validate the response CSV; errors carry the file line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: empty file")
        missing = set(_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise FormatError(f"{path}: missing column(s): {sorted(missing)}")
        responses = []
        seen = set()
        for line, row in enumerate(reader, start=2):
            rid = (row["respondent_id"] or "").strip()
            img = (row["image_id"] or "").strip()
            if not rid or not img:
                raise ValidationError(f"{path}:{line}: empty respondent or image id")
            group = (row["group"] or "").strip()
            if group not in GROUPS:
                raise ValidationError(f"{path}:{line}: unknown group {group!r}")
            attribution = (row["attribution"] or "").strip()
            if attribution not in ATTRIBUTIONS:
                raise ValidationError(f"{path}:{line}: unknown attribution {attribution!r}")
            scores = {}
            for crit in CRITERIA:
                raw = (row[crit] or "").strip()
                try:
                    value = int(raw)
                except ValueError:
                    raise ValidationError(
                        f"{path}:{line}: {crit} must be an integer, got {raw!r}") from None
                if not 1 <= value <= 5:
                    raise ValidationError(
                        f"{path}:{line}: {crit}={value} outside the 1-5 scale")
                scores[crit] = value
            key = (rid, img)
            if key in seen:
                raise ValidationError(f"{path}:{line}: duplicate rating of {img!r} "
                                      f"by {rid!r}")
            seen.add(key)
            responses.append(SurveyResponse(respondent_id=rid, image_id=img,
                                            group=group, attribution=attribution,
                                            **scores))
    return responses


def _image_groups(responses) -> dict[str, str]:
    groups = {}
    for r in responses:
        prev = groups.setdefault(r.image_id, r.group)
        if prev != r.group:
            raise ValidationError(f"image {r.image_id!r} appears in both groups")
    return groups


def aggregate(responses, allow_partial: bool = False) -> CaseStudyReport:
    """Two-stage aggregation: per-image means, then group mean and population
    std over the per-image means."""
    if not responses:
        raise InsufficientDataError("no responses to aggregate")
    image_group = _image_groups(responses)
    seen = set()
    for r in responses:
        key = (r.respondent_id, r.image_id)
        if key in seen:
            raise ValidationError(f"duplicate rating of {r.image_id!r} "
                                  f"by {r.respondent_id!r}")
        seen.add(key)
    respondents = sorted({r.respondent_id for r in responses})
    images = sorted(image_group)
    if not allow_partial and len(responses) != len(respondents) * len(images):
        raise InsufficientDataError(
            f"incomplete grid: {len(responses)} rows for {len(respondents)} "
            f"respondents x {len(images)} images (pass allow_partial to accept)")

    by_image: dict[str, list[SurveyResponse]] = {}
    for r in responses:
        by_image.setdefault(r.image_id, []).append(r)

    criteria = {}
    for crit in CRITERIA:
        criteria[crit] = {}
        for group in GROUPS:
            group_images = [img for img in images if image_group[img] == group]
            if not group_images:
                raise InsufficientDataError(f"no images in group {group!r}")
            per_image = np.array([
                np.mean([r.score(crit) for r in by_image[img]]) for img in group_images
            ])
            criteria[crit][group] = {"mean": float(per_image.mean()),
                                     "std": float(per_image.std())}

    attribution = {}
    judgments = {}
    for group in GROUPS:
        rows = [r for r in responses if r.group == group]
        judgments[group] = len(rows)
        attribution[group] = sum(1 for r in rows if r.attribution == "artist") / len(rows)

    counts = {
        "respondents": len(respondents),
        "images": {g: sum(1 for img in images if image_group[img] == g) for g in GROUPS},
        "judgments": judgments,
    }
    return CaseStudyReport(criteria=criteria, attribution=attribution, counts=counts)


def attribution_rate(responses, group: str) -> float:
    """Fraction of a group's judgments answered "artist", to 3 decimals."""
    if group not in GROUPS:
        raise ValidationError(f"unknown group {group!r}")
    rows = [r for r in responses if r.group == group]
    if not rows:
        raise InsufficientDataError(f"no judgments for group {group!r}")
    return round(sum(1 for r in rows if r.attribution == "artist") / len(rows), 3)


def emit_report(report: CaseStudyReport, format: str, path) -> None:
    if format == "json":
        text = report.to_json() + "\n"
    elif format == "csv":
        text = report.to_csv()
    else:
        raise ValidationError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
