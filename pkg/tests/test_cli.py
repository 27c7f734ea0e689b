"""Config parsing, CSV persistence, and CLI entry-point tests."""

import json
import math

import numpy as np
import pytest

from fairagg.cli import (
    ROUNDS_HEADER,
    SUMMARY_HEADER,
    ExperimentConfig,
    _fmt,
    build_state,
    main,
    parse_config,
    resolve_bounds,
    resolve_cdf,
    run_experiment,
    sequence_regret,
    serialize_config,
    synthetic_responses,
    write_results,
)
from fairagg.errors import ConfigError, DomainError
from fairagg.response import CdfFamily

MINIMAL = '{"K": 10, "T": 50, "method": "Static"}'


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert (cfg.K, cfg.T, cfg.method) == (10, 50, "Static")
    assert cfg.C == 1.0
    assert cfg.B == 20
    assert cfg.E == 1
    assert cfg.seeds == [0]
    assert cfg.partition == "IID"
    bounds = resolve_bounds(cfg)
    assert (bounds.c1, bounds.c2) == (0.0, pytest.approx(0.1))
    assert resolve_cdf(cfg).family is CdfFamily.NORMAL


def test_cross_device_bounds_and_default_cdf():
    cfg = parse_config(
        '{"K": 100, "T": 5, "method": "AAggFFD", "C": 0.01, "bounds_mode": "CrossDevice"}'
    )
    bounds = resolve_bounds(cfg)
    assert (bounds.c1, bounds.c2) == (0.0, pytest.approx(0.01))
    assert resolve_cdf(cfg).family is CdfFamily.WEIBULL


def test_explicit_bounds_require_both_endpoints():
    with pytest.raises(ConfigError, match="c1"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "bounds_mode": "Explicit"}')
    cfg = parse_config(
        '{"K": 4, "T": 5, "method": "Static", "bounds_mode": "Explicit",'
        ' "c1": 0.1, "c2": 0.4}'
    )
    bounds = resolve_bounds(cfg)
    assert (bounds.c1, bounds.c2) == (0.1, 0.4)


def test_exponential_cdf_ignores_shape():
    cfg = parse_config(
        '{"K": 4, "T": 5, "method": "Static", "cdf": "Exponential", "cdf_shape": 2.0}'
    )
    kind = resolve_cdf(cfg)
    assert kind.family is CdfFamily.EXPONENTIAL
    assert kind.shape is None


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="learning_rate"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "learning_rate": 0.1}')


def test_missing_required_keys_are_named():
    with pytest.raises(ConfigError, match="T, method"):
        parse_config('{"K": 4}')


def test_bad_json_and_non_object_rejected():
    with pytest.raises(ConfigError, match="not valid JSON"):
        parse_config("{K: 4}")
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config("[1, 2]")


def test_type_violations_rejected():
    with pytest.raises(ConfigError, match="'K'"):
        parse_config('{"K": "ten", "T": 5, "method": "Static"}')
    with pytest.raises(ConfigError, match="'K'"):
        parse_config('{"K": true, "T": 5, "method": "Static"}')
    with pytest.raises(ConfigError, match="'lr'"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "lr": "fast"}')


def test_enum_violations_rejected():
    with pytest.raises(ConfigError, match="'method'"):
        parse_config('{"K": 4, "T": 5, "method": "FancyNew"}')
    with pytest.raises(ConfigError, match="'partition'"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "partition": "Sharded"}')


def test_seed_list_violations_rejected():
    with pytest.raises(ConfigError, match="seeds"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "seeds": []}')
    with pytest.raises(ConfigError, match="seeds"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "seeds": [1, "two"]}')
    with pytest.raises(ConfigError, match="seeds"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "seeds": [true]}')


def test_range_violations_rejected():
    with pytest.raises(ConfigError, match="'C'"):
        parse_config('{"K": 4, "T": 5, "method": "Static", "C": 0.0}')
    with pytest.raises(ConfigError, match="'K' and 'T'"):
        parse_config('{"K": 0, "T": 5, "method": "Static"}')
    with pytest.raises(ConfigError, match="'q'"):
        parse_config('{"K": 4, "T": 5, "method": "QFedAvg", "q": -1.0}')
    with pytest.raises(ConfigError, match="'tilt'"):
        parse_config('{"K": 4, "T": 5, "method": "TERM", "tilt": 0.0}')


def test_serialization_round_trip_is_stable():
    once = serialize_config(parse_config(MINIMAL))
    twice = serialize_config(parse_config(once))
    assert once == twice
    assert json.loads(once)["seeds"] == [0]


# ---------------------------------------------------------------------------
# float formatting
# ---------------------------------------------------------------------------

def test_floats_carry_12_significant_digits():
    assert _fmt(1.0 / 3.0) == "0.333333333333"
    assert _fmt(1.0) == "1"
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = float(rng.uniform(-10, 10)) * 10.0 ** int(rng.integers(-8, 9))
        back = float(_fmt(x))
        assert back == pytest.approx(x, rel=1e-11)


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def small_config(tmp_path, **extra):
    body = {
        "K": 3, "T": 2, "method": "Static", "num_samples": 60,
        "output_dir": str(tmp_path / "out"),
    }
    body.update(extra)
    return parse_config(json.dumps(body))


def test_run_experiment_writes_expected_files(tmp_path):
    cfg = small_config(tmp_path)
    assert run_experiment(cfg) == 0
    out = tmp_path / "out"
    rounds = (out / "rounds_seed0.csv").read_text().splitlines()
    assert rounds[0] == ROUNDS_HEADER
    assert len(rounds) == 3  # header + T rows
    first = rounds[1].split(",")
    assert first[0] == "0"
    assert first[1] == "0;1;2"
    decision = [float(x) for x in first[4].split(";")]
    assert sum(decision) == pytest.approx(1.0)

    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == SUMMARY_HEADER
    assert [row.split(",")[0] for row in summary[1:]] == ["0", "mean", "std"]


def test_run_experiment_one_file_per_seed(tmp_path):
    cfg = small_config(tmp_path, seeds=[0, 7])
    assert run_experiment(cfg) == 0
    out = tmp_path / "out"
    assert (out / "rounds_seed0.csv").exists()
    assert (out / "rounds_seed7.csv").exists()
    summary = (out / "summary.csv").read_text().splitlines()
    assert [row.split(",")[0] for row in summary[1:]] == ["0", "7", "mean", "std"]


def test_reruns_are_byte_identical(tmp_path):
    cfg_a = small_config(tmp_path, method="AAggFFD", C=0.5, output_dir=str(tmp_path / "a"))
    cfg_b = small_config(tmp_path, method="AAggFFD", C=0.5, output_dir=str(tmp_path / "b"))
    assert run_experiment(cfg_a, threads=1) == 0
    assert run_experiment(cfg_b, threads=3) == 0
    for name in ("rounds_seed0.csv", "summary.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b


def test_decision_column_round_trips_at_high_precision(tmp_path):
    cfg = small_config(tmp_path, method="AAggFFD", T=3)
    state = build_state(cfg, seed=0)
    from fairagg.fedsim import run_round

    reports = [run_round(state, t) for t in range(cfg.T)]
    assert run_experiment(cfg) == 0
    rows = (tmp_path / "out" / "rounds_seed0.csv").read_text().splitlines()[1:]
    for report, row in zip(reports, rows):
        parsed = np.array([float(x) for x in row.split(",")[4].split(";")])
        np.testing.assert_allclose(parsed, report.decision, rtol=1e-11)


def test_write_results_with_no_seeds_is_header_only(tmp_path):
    write_results({}, {}, tmp_path / "empty")
    summary = (tmp_path / "empty" / "summary.csv").read_text()
    assert summary == SUMMARY_HEADER + "\n"


def test_unwritable_output_directory_fails_cleanly(tmp_path, capsys):
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory")
    cfg = small_config(tmp_path, output_dir=str(blocker / "sub"))
    assert run_experiment(cfg) == 1
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# diagnostics helpers
# ---------------------------------------------------------------------------

def test_synthetic_responses_are_bounded_and_deterministic():
    a = synthetic_responses(5, 120, 0.2, seed=1)
    b = synthetic_responses(5, 120, 0.2, seed=1)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (120, 5)
    assert a.min() >= 0.0 and a.max() <= 0.2
    favored = a[:50, 0]
    assert favored.min() >= 0.1  # rotating favored coordinate draws high


def test_sequence_regret_is_positive_and_sublinear():
    responses = synthetic_responses(4, 400, 0.25, seed=2)
    short = sequence_regret("ftrl", responses[:100], 0.25)
    long = sequence_regret("ftrl", responses, 0.25)
    assert short >= 0.0
    assert long / 400.0 < short / 100.0
    with pytest.raises(ValueError):
        sequence_regret("sgd", responses, 0.25)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def test_main_run_subcommand(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps({"K": 3, "T": 2, "method": "AAggFFS", "num_samples": 45})
    )
    code = main([
        "run", "--config", str(config_path),
        "--output", str(tmp_path / "results"),
        "--seeds", "1,2",
        "--threads", "2",
    ])
    assert code == 0
    assert (tmp_path / "results" / "rounds_seed1.csv").exists()
    assert (tmp_path / "results" / "rounds_seed2.csv").exists()


def test_main_run_error_paths(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    assert "cannot read config" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 1
    assert "not valid JSON" in capsys.readouterr().err

    good = tmp_path / "good.json"
    good.write_text(MINIMAL)
    assert main(["run", "--config", str(good), "--seeds", "1,zwei"]) == 1
    assert "--seeds" in capsys.readouterr().err


def test_main_unify_check(capsys):
    assert main(["unify-check", "--instances", "20", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    assert "FAIL" not in out


def test_main_regret_bench(tmp_path, capsys):
    code = main([
        "regret-bench", "--rounds", "50,100", "--clients", "6",
        "--output", str(tmp_path / "bench"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    csv_lines = (tmp_path / "bench" / "regret_bench.csv").read_text().splitlines()
    assert csv_lines[0] == "method,T,regret,bound"
    assert len(csv_lines) == 5
    for line in csv_lines[1:]:
        label, horizon, regret, bound = line.split(",")
        assert label in ("AAggFFS", "AAggFFD")
        assert float(regret) <= float(bound)
        assert math.isfinite(float(regret))


def test_invalid_explicit_bounds_fail_at_build_time(tmp_path):
    cfg = small_config(tmp_path, bounds_mode="Explicit", c1=0.5, c2=0.1)
    with pytest.raises(DomainError):
        build_state(cfg, seed=0)
