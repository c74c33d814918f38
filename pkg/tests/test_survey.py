import csv
import json

import numpy as np
import pytest

from artgan import survey as sv
from artgan.errors import FormatError, InsufficientDataError, ValidationError

HEADER = ["respondent_id", "image_id", "group", "interesting", "inspiring",
          "innovative", "overall", "attribution"]


def write_rows(path, rows, header=HEADER):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def full_grid_rows(n_respondents, images, score_fn, attribution_fn):
    rows = []
    for r in range(n_respondents):
        for img, group in images:
            scores = [score_fn(r, img, crit) for crit in sv.CRITERIA]
            rows.append([f"r{r}", img, group, *scores, attribution_fn(r, img)])
    return rows


def default_images(n_per_group=2):
    images = [(f"real{i}", "real") for i in range(n_per_group)]
    images += [(f"gen{i}", "generated") for i in range(n_per_group)]
    return images


class TestParse:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [
            ["r1", "img1", "real", 3, 4, 5, 2, "artist"],
            ["r1", "img2", "generated", 1, 2, 3, 4, "computer"],
            ["r2", "img1", "real", 5, 5, 5, 5, "artist"],
        ])
        rows = sv.parse_responses(path)
        assert len(rows) == 3
        assert rows[0].interesting == 3

    def test_score_out_of_range_names_row(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [
            ["r1", "img1", "real", 3, 4, 5, 2, "artist"],
            ["r1", "img2", "real", 6, 4, 5, 2, "artist"],
        ])
        with pytest.raises(ValidationError, match=":3"):
            sv.parse_responses(path)

    def test_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [
            ["r1", "img3", "real", 3, 4, 5, 2, "artist"],
            ["r1", "img3", "real", 2, 2, 2, 2, "computer"],
        ])
        with pytest.raises(ValidationError, match="duplicate"):
            sv.parse_responses(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [["r1", "img1", "real", 3, 4, 5, "artist"]],
                   header=HEADER[:6] + ["attribution"])
        with pytest.raises(FormatError):
            sv.parse_responses(path)

    def test_unknown_group(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [["r1", "img1", "fake", 3, 4, 5, 2, "artist"]])
        with pytest.raises(ValidationError, match="group"):
            sv.parse_responses(path)

    def test_unknown_attribution(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [["r1", "img1", "real", 3, 4, 5, 2, "robot"]])
        with pytest.raises(ValidationError, match="attribution"):
            sv.parse_responses(path)

    def test_non_integer_score(self, tmp_path):
        path = tmp_path / "r.csv"
        write_rows(path, [["r1", "img1", "real", "3.5", 4, 5, 2, "artist"]])
        with pytest.raises(ValidationError, match="integer"):
            sv.parse_responses(path)


def make_responses(rows):
    return [sv.SurveyResponse(respondent_id=r, image_id=i, group=g,
                              interesting=a, inspiring=b, innovative=c,
                              overall=d, attribution=att)
            for r, i, g, a, b, c, d, att in rows]


class TestAggregate:
    def test_constant_threes(self):
        rows = full_grid_rows(4, default_images(), lambda *a: 3,
                              lambda *a: "computer")
        report = sv.aggregate(make_responses(rows))
        for crit in sv.CRITERIA:
            for group in sv.GROUPS:
                assert report.criteria[crit][group] == {"mean": 3.0, "std": 0.0}

    def test_two_image_hand_case(self):
        # per-image means 3 and 4 -> group mean 3.5, population std 0.5
        def score(r, img, crit):
            return 3 if img.endswith("0") else 4

        rows = full_grid_rows(3, default_images(), score, lambda *a: "computer")
        report = sv.aggregate(make_responses(rows))
        for group in sv.GROUPS:
            cell = report.criteria["interesting"][group]
            assert cell["mean"] == 3.5
            assert cell["std"] == 0.5

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        rows = full_grid_rows(5, default_images(3),
                              lambda r, img, crit: int(rng.integers(1, 6)),
                              lambda r, img: "artist" if rng.random() < 0.5
                              else "computer")
        responses = make_responses(rows)
        report_a = sv.aggregate(responses)
        shuffled = list(responses)
        np.random.default_rng(1).shuffle(shuffled)
        report_b = sv.aggregate(shuffled)
        assert report_a == report_b

    def test_mean_respondent_leaves_means_unchanged(self):
        rng = np.random.default_rng(2)
        rows = full_grid_rows(4, default_images(),
                              lambda r, img, crit: int(rng.integers(1, 6)),
                              lambda *a: "computer")
        responses = make_responses(rows)
        base = sv.aggregate(responses)
        by_image = {}
        for r in responses:
            by_image.setdefault(r.image_id, []).append(r)
        extra = []
        for img, rs in by_image.items():
            means = {crit: float(np.mean([x.score(crit) for x in rs]))
                     for crit in sv.CRITERIA}
            extra.append(sv.SurveyResponse(
                respondent_id="mean-bot", image_id=img, group=rs[0].group,
                attribution="computer", **means))
        grown = sv.aggregate(responses + extra)
        for crit in sv.CRITERIA:
            for group in sv.GROUPS:
                assert abs(grown.criteria[crit][group]["mean"]
                           - base.criteria[crit][group]["mean"]) <= 1e-12

    def test_incomplete_grid_rejected_without_allow_partial(self):
        rows = full_grid_rows(3, default_images(), lambda *a: 3,
                              lambda *a: "computer")
        responses = make_responses(rows)[:-1]
        with pytest.raises(InsufficientDataError):
            sv.aggregate(responses)
        report = sv.aggregate(responses, allow_partial=True)
        assert report.counts["respondents"] == 3

    def test_empty_group_rejected(self):
        rows = full_grid_rows(2, [("img0", "real"), ("img1", "real")],
                              lambda *a: 3, lambda *a: "computer")
        with pytest.raises(InsufficientDataError):
            sv.aggregate(make_responses(rows))

    def test_group_conflict_rejected(self):
        rows = [["r1", "img1", "real", 3, 3, 3, 3, "artist"],
                ["r2", "img1", "generated", 3, 3, 3, 3, "artist"]]
        with pytest.raises(ValidationError):
            sv.aggregate(make_responses(rows))

    def test_judgment_counts_conserved(self):
        rows = full_grid_rows(26, default_images(6), lambda *a: 3,
                              lambda *a: "computer")
        report = sv.aggregate(make_responses(rows))
        assert report.counts["judgments"] == {"real": 156, "generated": 156}
        assert report.counts["respondents"] == 26
        assert report.counts["images"] == {"real": 6, "generated": 6}


class TestAttribution:
    def test_all_computer(self):
        rows = full_grid_rows(2, default_images(), lambda *a: 3,
                              lambda *a: "computer")
        assert sv.attribution_rate(make_responses(rows), "generated") == 0.0

    def test_two_of_five(self):
        rows = [["r%d" % i, "img0", "generated", 3, 3, 3, 3,
                 "artist" if i < 2 else "computer"] for i in range(5)]
        assert sv.attribution_rate(make_responses(rows), "generated") == 0.400

    def test_rates_sum_to_one(self):
        rng = np.random.default_rng(3)
        rows = full_grid_rows(5, default_images(),
                              lambda *a: 3,
                              lambda r, img: "artist" if rng.random() < 0.4
                              else "computer")
        responses = make_responses(rows)
        report = sv.aggregate(responses)
        for group in sv.GROUPS:
            artist = report.attribution[group]
            computer = sum(1 for r in responses
                           if r.group == group and r.attribution == "computer") \
                / report.counts["judgments"][group]
            assert artist + computer == 1.0

    def test_empty_group(self):
        with pytest.raises(InsufficientDataError):
            sv.attribution_rate([], "real")


class TestEmit:
    def _report(self):
        rng = np.random.default_rng(4)
        rows = full_grid_rows(4, default_images(3),
                              lambda r, img, crit: int(rng.integers(1, 6)),
                              lambda r, img: "artist" if rng.random() < 0.3
                              else "computer")
        return sv.aggregate(make_responses(rows))

    def test_json_roundtrip(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.json"
        sv.emit_report(report, "json", path)
        back = sv.CaseStudyReport.from_json(path.read_text())
        assert back == report

    def test_csv_has_four_criterion_rows(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.csv"
        sv.emit_report(report, "csv", path)
        lines = path.read_text().strip().split("\n")
        header_idx = lines.index("criterion,real,generated")
        rows = []
        for line in lines[header_idx + 1:]:
            if not line.strip(","):
                break
            rows.append(line)
        assert len(rows) == 4
        assert [r.split(",")[0] for r in rows] == \
            ["Interesting", "Inspiring", "Innovative", "Overall"]

    def test_bar_block_has_eight_values(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.csv"
        sv.emit_report(report, "csv", path)
        text = path.read_text()
        block = text.split("criterion,real_mean,generated_mean\n", 1)[1]
        values = [cell for line in block.strip().split("\n")
                  for cell in line.split(",")[1:]]
        assert len(values) == 8

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValidationError):
            sv.emit_report(self._report(), "xml", tmp_path / "r.xml")

    def test_csv_cells_mirror_table_layout(self, tmp_path):
        rows = full_grid_rows(3, default_images(), lambda *a: 3,
                              lambda *a: "computer")
        report = sv.aggregate(make_responses(rows))
        path = tmp_path / "report.csv"
        sv.emit_report(report, "csv", path)
        assert "3.00 ± 0.00" in path.read_text()
