"""End-to-end tests of the command-line driver and the SVG plot output."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import pytest

from treatrank import build_ability_svg, emit_plot, fit_davidson
from treatrank.cli import main, parse_args
from treatrank.tcc import PairCounts, Tournament

FIXTURES = Path(__file__).parent / "fixtures"
CONTRASTS = FIXTURES / "contrasts.csv"
LEAGUE = FIXTURES / "league.csv"


def _run(*argv) -> int:
    return main([str(a) for a in argv])


def test_rank_on_the_bundled_fixture(tmp_path):
    code = _run("rank", "--input", CONTRASTS, "--out-dir", tmp_path, "--mcid", "1.2")
    assert code == 0
    rank_lines = (tmp_path / "rank.csv").read_text().splitlines()
    assert rank_lines[0] == "treatment,ability,se_log_ability,pi,rank"
    assert len(rank_lines) == 7  # header + six treatments
    assert [line.split(",")[-1] for line in rank_lines[1:]] == [str(k) for k in range(1, 7)]
    document = json.loads((tmp_path / "fit.json").read_text())
    assert set(document["treatments"]) == {
        "abrixan", "boretol", "caldex", "durvane", "eptrazol", "fimbrel"
    }
    assert document["n_records"] == 48
    assert document["converged"] is True
    assert math.fsum(document["pi"].values()) == pytest.approx(1.0, abs=1e-10)
    assert len(document["covariance"]) == len(document["param_names"])
    for entry in document["normalized"].values():
        assert entry["ci_lower"] <= entry["estimate"] <= entry["ci_upper"]
    svg = (tmp_path / "ability_plot.svg").read_text()
    assert svg.startswith("<svg")
    assert svg.count("<circle") == 6


def test_rank_csv_values_use_six_significant_digits(tmp_path):
    assert _run("rank", "--input", CONTRASTS, "--out-dir", tmp_path, "--mcid", "1.2") == 0
    for line in (tmp_path / "rank.csv").read_text().splitlines()[1:]:
        _, ability, se, pi, _ = line.split(",")
        for cell in (ability, se, pi):
            assert re.fullmatch(r"-?\d+(\.\d+)?(e-?\d+)?", cell)
            digits = re.sub(r"[-.e]", "", cell).lstrip("0")
            assert len(digits) <= 6


def test_rank_is_byte_deterministic(tmp_path):
    for directory in ("one", "two"):
        code = _run(
            "rank", "--input", CONTRASTS, "--out-dir", tmp_path / directory,
            "--mcid", "1.2", "--dump-records",
        )
        assert code == 0
    for name in ("rank.csv", "fit.json", "ability_plot.svg", "records.csv"):
        first = (tmp_path / "one" / name).read_bytes()
        second = (tmp_path / "two" / name).read_bytes()
        assert first == second, name


def test_rank_records_route_matches_contrast_route(tmp_path):
    assert _run("tcc-dump", "--input", CONTRASTS, "--out-dir", tmp_path, "--mcid", "1.2") == 0
    records = tmp_path / "records.csv"
    assert records.exists()
    assert _run(
        "rank", "--input", CONTRASTS, "--out-dir", tmp_path / "from_contrasts",
        "--mcid", "1.2",
    ) == 0
    assert _run(
        "rank", "--input", records, "--out-dir", tmp_path / "from_records", "--records",
    ) == 0
    first = (tmp_path / "from_contrasts" / "fit.json").read_bytes()
    second = (tmp_path / "from_records" / "fit.json").read_bytes()
    assert first == second


def test_rank_requires_an_mcid_for_contrast_input(tmp_path):
    assert _run("rank", "--input", CONTRASTS, "--out-dir", tmp_path) == 1
    document = json.loads((tmp_path / "error.json").read_text())
    assert document["exit_code"] == 1
    assert "mcid" in document["message"]


def test_rank_rejects_a_degenerate_mcid(tmp_path):
    assert _run(
        "rank", "--input", CONTRASTS, "--out-dir", tmp_path, "--mcid", "0.9"
    ) == 1


def test_rank_only_ties_is_a_model_error(tmp_path):
    source = tmp_path / "ties.csv"
    source.write_text(
        "study,treat1,treat2,verdict\ns1,A,B,tie\ns2,B,C,tie\ns3,A,C,tie\n"
    )
    code = _run("rank", "--input", source, "--out-dir", tmp_path, "--records")
    assert code == 2
    document = json.loads((tmp_path / "error.json").read_text())
    assert document["error"] == "OnlyTiesError"
    assert document["exit_code"] == 2


def test_rank_regularity_failure_names_the_bipartition(tmp_path):
    source = tmp_path / "chain.csv"
    source.write_text(
        "study,treat1,treat2,verdict\n"
        "s1,A,B,first_wins\ns2,B,C,first_wins\ns3,A,C,first_wins\n"
    )
    code = _run("rank", "--input", source, "--out-dir", tmp_path, "--records")
    assert code == 2
    document = json.loads((tmp_path / "error.json").read_text())
    assert document["error"] == "FordConditionError"
    assert document["subset"] == ["A"]
    assert sorted(document["complement"]) == ["B", "C"]


def test_rank_missing_input_file(tmp_path):
    assert _run("rank", "--input", tmp_path / "nope.csv", "--out-dir", tmp_path,
                "--mcid", "1.2") == 1


def test_format_selection_limits_artifacts(tmp_path):
    code = _run(
        "rank", "--input", CONTRASTS, "--out-dir", tmp_path,
        "--mcid", "1.2", "--format", "json",
    )
    assert code == 0
    assert (tmp_path / "fit.json").exists()
    assert not (tmp_path / "rank.csv").exists()
    assert not (tmp_path / "ability_plot.svg").exists()


def test_unknown_format_is_rejected():
    assert _run("rank", "--input", CONTRASTS, "--mcid", "1.2", "--format", "csv,pdf") == 1


def test_unknown_subcommand_is_rejected():
    assert _run("describe", "--input", CONTRASTS) == 1


def test_parse_args_builds_a_run_config():
    config = parse_args(
        [
            "partition", "--input", str(CONTRASTS), "--out-dir", "/tmp/x",
            "--mcid", "1.25", "--partition", "age,setting", "--alpha", "0.01",
            "--permutations", "500", "--seed", "9",
        ]
    )
    assert config.subcommand == "partition"
    assert config.covariates == ("age", "setting")
    assert config.alpha == 0.01
    assert config.permutations == 500
    assert config.seed == 9
    assert config.mcid == 1.25


def test_partition_on_the_bundled_fixture(tmp_path):
    code = _run(
        "partition", "--input", CONTRASTS, "--out-dir", tmp_path,
        "--mcid", "1.2", "--permutations", "199",
    )
    assert code == 0
    document = json.loads((tmp_path / "tree.json").read_text())
    assert document["config"]["permutations"] == 199
    assert document["config"]["covariates"] == ["age", "setting"]
    assert document["tree"]["n_records"] == 48
    text = (tmp_path / "tree.txt").read_text()
    assert text.startswith("n=48")


def test_partition_covariate_subset_and_unknown_name(tmp_path):
    code = _run(
        "partition", "--input", CONTRASTS, "--out-dir", tmp_path,
        "--mcid", "1.2", "--partition", "age", "--permutations", "199",
    )
    assert code == 0
    document = json.loads((tmp_path / "tree.json").read_text())
    assert document["config"]["covariates"] == ["age"]
    assert _run(
        "partition", "--input", CONTRASTS, "--out-dir", tmp_path,
        "--mcid", "1.2", "--partition", "dose",
    ) == 1


def test_partition_is_byte_deterministic(tmp_path):
    for directory in ("one", "two"):
        assert _run(
            "partition", "--input", CONTRASTS, "--out-dir", tmp_path / directory,
            "--mcid", "1.2", "--permutations", "199", "--seed", "3",
        ) == 0
    assert (tmp_path / "one" / "tree.json").read_bytes() == (
        tmp_path / "two" / "tree.json"
    ).read_bytes()


def test_compare_on_a_pairwise_league_table(tmp_path):
    code = _run(
        "compare", "--input", LEAGUE, "--out-dir", tmp_path,
        "--mcid", "1.2", "--nsim", "20000",
    )
    assert code == 0
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert lines[0] == "treatment,p_score,p_score_civ,p_bv"
    assert len(lines) == 7
    document = json.loads((tmp_path / "scores.json").read_text())
    assert math.fsum(document["prob_best"].values()) == pytest.approx(1.0, abs=1e-12)
    mean_score = math.fsum(document["p_scores"].values()) / 6
    assert mean_score == pytest.approx(0.5, abs=1e-12)
    assert document["mcid"] == 1.2
    # The league table points the same way as the designed hierarchy.
    assert max(document["p_scores"], key=document["p_scores"].get) == "abrixan"


def test_compare_seed_controls_the_simulation(tmp_path):
    for directory, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert _run(
            "compare", "--input", LEAGUE, "--out-dir", tmp_path / directory,
            "--nsim", "5000", "--seed", seed,
        ) == 0
    read = lambda d: (tmp_path / d / "scores.json").read_bytes()
    assert read("a") == read("b")
    assert read("a") != read("c")


def test_compare_basic_form_with_covariance(tmp_path):
    basic = tmp_path / "basic.csv"
    basic.write_text("treat,estimate_vs_ref,se\nref,0.0,0.0\nA,0.30,0.10\nB,0.10,0.12\n")
    cov = tmp_path / "cov.csv"
    cov.write_text(
        ",ref,A,B\nref,0.0,0.0,0.0\nA,0.0,0.010,0.002\nB,0.0,0.002,0.0144\n"
    )
    code = _run(
        "compare", "--input", basic, "--out-dir", tmp_path,
        "--covariance", cov, "--nsim", "5000",
    )
    assert code == 0
    document = json.loads((tmp_path / "scores.json").read_text())
    assert document["prob_best"]["A"] == max(document["prob_best"].values())


def test_compare_rejects_covariance_with_pairwise_input(tmp_path):
    cov = tmp_path / "cov.csv"
    cov.write_text(",A,B\nA,0.01,0.0\nB,0.0,0.01\n")
    assert _run(
        "compare", "--input", LEAGUE, "--out-dir", tmp_path, "--covariance", cov
    ) == 1


def test_compare_rejects_unrecognized_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("name,value\nA,1\n")
    assert _run("compare", "--input", bad, "--out-dir", tmp_path) == 1


# ---------------------------------------------------------------- plot


def _small_fit():
    return fit_davidson(
        Tournament(
            treatments=("alpha", "beta & co", "gamma"),
            counts={
                ("alpha", "beta & co"): PairCounts(3, 1, 2),
                ("alpha", "gamma"): PairCounts(2, 1, 1),
                ("beta & co", "gamma"): PairCounts(2, 2, 2),
            },
        )
    )


def test_svg_marks_every_treatment_and_escapes_labels():
    svg = build_ability_svg(_small_fit())
    assert svg.count("<circle") == 3
    assert "beta &amp; co" in svg
    assert "&amp; co</text>" in svg
    assert "95% intervals" in svg


def test_svg_honors_the_ci_level():
    svg = build_ability_svg(_small_fit(), ci_level=0.9)
    assert "90% intervals" in svg


def test_emit_plot_writes_the_same_bytes(tmp_path):
    fit = _small_fit()
    path = tmp_path / "plot.svg"
    emit_plot(fit, path)
    assert path.read_text(encoding="utf-8") == build_ability_svg(fit)
